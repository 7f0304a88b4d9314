//! Degree-2 regression experiments: area regression across affine-equivalent
//! spaces, the CP rank sweep, and exact reparameterization of fitted probes.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use probequot_core::estimators::{fit_ridge, Method, OptimizerConfig, RidgeConfig};
use probequot_core::metrics::{median, r2};
use probequot_core::probes::{
    cp_param_count, evaluate_frozen_sparse, fit_cp_whitened, fit_kernel_poly, fit_quadratic, fit_sparse_quadratic,
    sample_affine, transport_linear, AffineTransform, CpProbe, CpValidation, FitConfig, Target,
};
use probequot_core::rng::{self, derive_seed};
use probequot_core::synthgen::{gen_area, EMBED_COND_MAX};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::report::{markdown_table, ExperimentReport};

const CP_RANKS: [usize; 5] = [1, 2, 4, 8, 16];

fn r2_of(pred: &DVector<f64>, y: &[f64]) -> Result<f64> {
    Ok(r2(pred.as_slice(), y)?)
}

pub(crate) fn cp_optimizer(cfg: &ExperimentConfig, seed: u64) -> Result<OptimizerConfig> {
    Ok(OptimizerConfig {
        method: Method::QuasiNewtonWolfe,
        restarts: cfg.usize("cp_restarts", 3)?,
        max_epochs: cfg.usize("cp_max_iter", 500)?,
        seed,
        ..Default::default()
    })
}

/// CP fit whose restarts are ranked by R² on a validation set.
fn fit_cp_regression(
    xtr: &DMatrix<f64>,
    ytr: &[f64],
    xval: &DMatrix<f64>,
    yval: &[f64],
    rank: usize,
    opt: &OptimizerConfig,
) -> Result<CpProbe> {
    let score = |s: &DVector<f64>| r2(s.as_slice(), yval).unwrap_or(f64::NEG_INFINITY);
    Ok(fit_cp_whitened(
        xtr,
        Target::Regression(ytr),
        2,
        rank,
        opt,
        Some(CpValidation { x: xval, score: &score }),
    )?)
}

struct AreaData {
    /// Train and test rows in each of the equivalent spaces.
    train: Vec<DMatrix<f64>>,
    test: Vec<DMatrix<f64>>,
    /// Map from space 0 to space `m` (index 0 is the identity).
    from_base: Vec<AffineTransform>,
    ytr: Vec<f64>,
    yte: Vec<f64>,
}

fn area_data(cfg: &ExperimentConfig, seed: u64) -> Result<AreaData> {
    let d = cfg.usize("d", 64)?;
    let n_train = cfg.usize("n_train", 5000)?;
    let n_test = cfg.usize("n_test", 1000)?;
    let spaces = cfg.usize("spaces", 4)?.max(1);
    let ds = gen_area(d, cfg.f64("sigma", 0.1)?, n_train, n_test, seed)?;
    let y = ds.y.as_real().expect("real targets");
    let maps: Vec<AffineTransform> = (0..spaces)
        .map(|m| sample_affine(d, EMBED_COND_MAX, derive_seed(seed, &format!("area-space-{m}"))))
        .collect::<std::result::Result<_, _>>()?;
    let z_tr = ds.x.rows(0, n_train).into_owned();
    let z_te = ds.x.rows(n_train, n_test).into_owned();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for g in &maps {
        train.push(g.apply(&z_tr)?);
        test.push(g.apply(&z_te)?);
    }
    let base_inv = maps[0].inverse();
    let from_base = maps
        .iter()
        .map(|g| g.compose(&base_inv))
        .collect::<std::result::Result<_, _>>()?;
    Ok(AreaData {
        train,
        test,
        from_base,
        ytr: y[..n_train].to_vec(),
        yte: y[n_train..].to_vec(),
    })
}

/// Mean over spaces `1..M` of the R² of `eval(m)` on that space's test rows.
fn transfer_mean(data: &AreaData, mut eval: impl FnMut(usize) -> Result<DVector<f64>>) -> Result<f64> {
    let m = data.test.len();
    if m < 2 {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for k in 1..m {
        total += r2_of(&eval(k)?, &data.yte)?;
    }
    Ok(total / (m - 1) as f64)
}

pub fn area_regression(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let ridge = RidgeConfig::with_alpha(cfg.f64("ridge_alpha", 1e-4)?);
    let kernel_alpha = cfg.f64("kernel_alpha", 1e-4)?;
    let sparse_k = cfg.usize("sparse_k", 50)?;
    let ranks = cfg.usize_list("ranks", &CP_RANKS)?;
    let val_frac = cfg.f64("cp_val_fraction", 0.2)?;
    let mut rep = ExperimentReport::new("area_regression", &["family"]);
    let mut transport_gap: f64 = 0.0;
    for &seed in &cfg.seeds {
        let data = area_data(cfg, seed)?;
        let (x0, x0_te) = (&data.train[0], &data.test[0]);
        let d = x0.ncols();
        let fam = |f: &str| [("family", f.to_string())];
        let record = |rep: &mut ExperimentReport, f: &str, in_space: f64, transfer: f64, params: f64| {
            rep.push(seed, &fam(f), "r2_in_space", in_space);
            rep.push(seed, &fam(f), "r2_transfer", transfer);
            rep.push(seed, &fam(f), "params", params);
        };

        let lin = fit_ridge(x0, &data.ytr, &ridge)?;
        let lin_in = r2_of(&lin.decision_function(x0_te)?, &data.yte)?;
        let lin_tr = transfer_mean(&data, |m| {
            Ok(transport_linear(&lin, &data.from_base[m])?.decision_function(&data.test[m])?)
        })?;
        record(&mut rep, "affine", lin_in, lin_tr, (d + 1) as f64);

        let quad = fit_quadratic(x0, Target::Regression(&data.ytr), &FitConfig::Ridge(ridge))?;
        let quad_in = r2_of(&quad.score(x0_te)?, &data.yte)?;
        let quad_tr = transfer_mean(&data, |m| {
            let s = quad.transport(&data.from_base[m])?.score(&data.test[m])?;
            transport_gap = transport_gap.max((r2_of(&s, &data.yte)? - quad_in).abs());
            Ok(s)
        })?;
        record(
            &mut rep,
            "full-quadratic",
            quad_in,
            quad_tr,
            quad.coefficients.len() as f64,
        );

        // CP: rank chosen on a validation split of the training rows.
        let n_val = ((x0.nrows() as f64) * val_frac).round() as usize;
        let n_fit = x0.nrows() - n_val;
        let (xf, xv) = (x0.rows(0, n_fit).into_owned(), x0.rows(n_fit, n_val).into_owned());
        let (yf, yv) = (&data.ytr[..n_fit], &data.ytr[n_fit..]);
        let opt = cp_optimizer(cfg, derive_seed(seed, "area-cp"))?;
        let mut best: Option<(f64, CpProbe)> = None;
        for &rank in &ranks {
            let p = fit_cp_regression(&xf, yf, &xv, yv, rank, &opt)?;
            let v = r2_of(&p.score(&xv)?, yv)?;
            rep.push(seed, &[("family", format!("cp-rank-{rank}"))], "r2_validation", v);
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, p));
            }
        }
        let (_, cp) = best.expect("at least one rank");
        let cp_in = r2_of(&cp.score(x0_te)?, &data.yte)?;
        let cp_tr = transfer_mean(&data, |m| Ok(cp.transport(&data.from_base[m])?.score(&data.test[m])?))?;
        record(&mut rep, "cp-cv", cp_in, cp_tr, cp.param_count() as f64);
        rep.push(seed, &fam("cp-cv"), "rank", cp.rank as f64);

        let kern = fit_kernel_poly(x0, &data.ytr, 2, kernel_alpha)?;
        let kern_in = r2_of(&kern.predict(x0_te)?, &data.yte)?;
        let kern_tr = transfer_mean(&data, |m| Ok(kern.predict(&data.test[m])?))?;
        record(&mut rep, "poly-kernel", kern_in, kern_tr, f64::NAN);

        let sparse = fit_sparse_quadratic(x0, &data.ytr, sparse_k, &ridge)?;
        let sparse_in = r2_of(&sparse.score(x0_te)?, &data.yte)?;
        let sparse_tr = transfer_mean(&data, |m| {
            Ok(evaluate_frozen_sparse(&sparse, &data.from_base[m], &data.test[m])?)
        })?;
        record(
            &mut rep,
            "sparse-quadratic",
            sparse_in,
            sparse_tr,
            (sparse.support.len() + 1) as f64,
        );
    }

    let fam = |f: &str| [("family", f.to_string())];
    let families = [
        ("affine", "Affine (degree 1)"),
        ("full-quadratic", "Full quadratic"),
        ("cp-cv", "Low-rank CP (CV rank)"),
        ("poly-kernel", "Polynomial kernel Ridge"),
        ("sparse-quadratic", "Sparse quadratic"),
    ];
    let table: Vec<Vec<String>> = families
        .iter()
        .map(|(key, label)| {
            let params = rep.values(&fam(key), "params");
            let params = if params.iter().any(|p| p.is_nan()) {
                "implicit".to_string()
            } else if params.iter().all(|p| *p == params[0]) {
                format!("{}", params[0])
            } else {
                format!("{}–{}", rep.min(&fam(key), "params"), rep.max(&fam(key), "params"))
            };
            vec![
                label.to_string(),
                params,
                rep.cell(&fam(key), "r2_in_space", 3),
                rep.cell(&fam(key), "r2_transfer", 3),
            ]
        })
        .collect();
    rep.markdown = markdown_table(
        "Area regression: in-space and transfer R² across affine-equivalent spaces",
        &["Probe family", "# Params", "In-space R²", "Transfer R²"],
        &table,
    );
    let ranks_chosen: Vec<f64> = rep.values(&fam("cp-cv"), "rank");
    rep.markdown
        .push_str(&format!("Validation-selected CP ranks per seed: {ranks_chosen:?}\n"));

    let affine = rep.mean(&fam("affine"), "r2_in_space");
    let quad = rep.mean(&fam("full-quadratic"), "r2_in_space");
    let cp = rep.mean(&fam("cp-cv"), "r2_in_space");
    let sparse_tr = rep.max(&fam("sparse-quadratic"), "r2_transfer");
    let kern_tr = rep.max(&fam("poly-kernel"), "r2_transfer");
    rep.check(
        "affine probe underfits",
        (0.82..=0.89).contains(&affine),
        format!("mean affine R² {affine:.4} (envelope [0.82, 0.89])"),
    );
    rep.check(
        "full quadratic recovers the product",
        quad >= 0.999,
        format!("mean R² {quad:.5} (≥ 0.999)"),
    );
    rep.check("cross-validated CP", cp >= 0.985, format!("mean R² {cp:.4} (≥ 0.985)"));
    rep.check(
        "transported full quadratic transfers exactly",
        transport_gap <= 1e-6,
        format!("max |transfer R² − in-space R²| {transport_gap:.2e} (≤ 1e-6)"),
    );
    rep.check(
        "sparse and kernel probes break on transfer",
        sparse_tr < 0.0 && kern_tr < 0.0,
        format!("max transfer R²: sparse {sparse_tr:.3}, kernel {kern_tr:.3} (both < 0)"),
    );
    rep.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(rep)
}

pub fn cp_rank_sweep(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let ranks = cfg.usize_list("ranks", &CP_RANKS)?;
    let val_frac = cfg.f64("cp_val_fraction", 0.2)?;
    let ridge = RidgeConfig::with_alpha(cfg.f64("ridge_alpha", 1e-4)?);
    let mut rep = ExperimentReport::new("cp_rank_sweep", &["rank"]);
    let mut d = 0;
    for &seed in &cfg.seeds {
        let data = area_data(&cfg.clone().with_param("spaces", 1), seed)?;
        let (x0, x0_te) = (&data.train[0], &data.test[0]);
        d = x0.ncols();
        let n_val = ((x0.nrows() as f64) * val_frac).round() as usize;
        let n_fit = x0.nrows() - n_val;
        let (xf, xv) = (x0.rows(0, n_fit).into_owned(), x0.rows(n_fit, n_val).into_owned());
        let (yf, yv) = (&data.ytr[..n_fit], &data.ytr[n_fit..]);
        let opt = cp_optimizer(cfg, derive_seed(seed, "cp-sweep"))?;
        for &rank in &ranks {
            let p = fit_cp_regression(&xf, yf, &xv, yv, rank, &opt)?;
            let key = [("rank", rank.to_string())];
            rep.push(seed, &key, "r2", r2_of(&p.score(x0_te)?, &data.yte)?);
            rep.push(seed, &key, "params", p.param_count() as f64);
        }
        let quad = fit_quadratic(x0, Target::Regression(&data.ytr), &FitConfig::Ridge(ridge))?;
        let key = [("rank", "full".to_string())];
        rep.push(seed, &key, "r2", r2_of(&quad.score(x0_te)?, &data.yte)?);
        rep.push(seed, &key, "params", quad.coefficients.len() as f64);
    }
    let key = |r: &str| [("rank", r.to_string())];
    let mut table = Vec::new();
    let mut medians = Vec::new();
    for &rank in &ranks {
        let k = key(&rank.to_string());
        medians.push(median(&rep.values(&k, "r2")));
        table.push(vec![
            rank.to_string(),
            format!("{}", cp_param_count(d, 2, rank)?),
            rep.cell(&k, "r2", 4),
            format!("{:.4}", medians.last().unwrap()),
        ]);
    }
    table.push(vec![
        "Full".into(),
        format!("{}", rep.max(&key("full"), "params")),
        rep.cell(&key("full"), "r2", 4),
        format!("{:.4}", median(&rep.values(&key("full"), "r2"))),
    ]);
    rep.markdown = markdown_table(
        "CP rank sweep on area regression",
        &["CP rank", "# Params", "R²", "Median R²"],
        &table,
    );
    let r1 = rep.mean(&key("1"), "r2");
    let r1_params = rep.values(&key("1"), "params");
    let params_ok = d != 64 || r1_params.iter().all(|p| *p == 196.0);
    rep.check(
        "rank-1 CP recovers area",
        ranks.contains(&1) && r1 >= 0.97 && params_ok,
        format!(
            "mean rank-1 R² {r1:.4} (≥ 0.97) with {:?} parameters (196 at d = 64)",
            r1_params.first()
        ),
    );
    let monotone = medians.windows(2).all(|w| w[1] >= w[0] - 0.003);
    rep.check(
        "median R² non-decreasing in rank",
        monotone,
        format!(
            "medians over ranks {ranks:?}: {:?} (slack 0.003)",
            medians.iter().map(|m| (m * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    );
    rep.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(rep)
}

/// `y = ⟨a,z⟩⟨b,z⟩ + ⟨c,z⟩ + ε` with `z ~ N(0, I)` and unit-norm directions.
fn bilinear_target(d: usize, n: usize, noise: f64, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
    let mut g_dir = rng::stream(seed, 1);
    let a = rng::unit_vector(&mut g_dir, d);
    let b = rng::unit_vector(&mut g_dir, d);
    let c = rng::unit_vector(&mut g_dir, d);
    let z = rng::normal_matrix(&mut rng::stream(seed, 2), n, d);
    let mut g_eps = rng::stream(seed, 3);
    let (za, zb, zc) = (&z * a, &z * b, &z * c);
    let y = (0..n)
        .map(|i| za[i] * zb[i] + zc[i] + noise * rng::normal(&mut g_eps))
        .collect();
    (z, y)
}

pub fn exact_reparam(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let d = cfg.usize("d", 64)?;
    let n_train = cfg.usize("n_train", 5000)?;
    let n_test = cfg.usize("n_test", 1000)?;
    let transforms = cfg.usize("transforms", 20)?;
    let ridge = RidgeConfig::with_alpha(cfg.f64("ridge_alpha", 1e-6)?);
    let sparse_k = cfg.usize("sparse_k", 50)?;
    let noise = cfg.f64("noise", 0.1)?;
    let mut rep = ExperimentReport::new("exact_reparam", &["probe", "transform"]);
    for &seed in &cfg.seeds {
        let (z, y) = bilinear_target(d, n_train + n_test, noise, seed);
        let (ztr, zte) = (z.rows(0, n_train).into_owned(), z.rows(n_train, n_test).into_owned());
        let (ytr, yte) = (&y[..n_train], &y[n_train..]);
        let quad = fit_quadratic(&ztr, Target::Regression(ytr), &FitConfig::Ridge(ridge))?;
        let sparse = fit_sparse_quadratic(&ztr, ytr, sparse_k, &ridge)?;
        let base = quad.score(&zte)?;
        rep.push(
            seed,
            &[("probe", "full-quadratic".into()), ("transform", "none".into())],
            "r2",
            r2_of(&base, yte)?,
        );
        rep.push(
            seed,
            &[("probe", "sparse".into()), ("transform", "none".into())],
            "r2",
            r2_of(&sparse.score(&zte)?, yte)?,
        );
        for t in 0..transforms {
            let g = sample_affine(d, EMBED_COND_MAX, derive_seed(seed, &format!("reparam-{t}")))?;
            let zt = g.apply(&zte)?;
            let moved = quad.transport(&g)?.score(&zt)?;
            let err = (&moved - &base).amax();
            let tk = |p: &str| [("probe", p.to_string()), ("transform", t.to_string())];
            rep.push(seed, &tk("full-quadratic"), "max_abs_error", err);
            rep.push(seed, &tk("full-quadratic"), "r2", r2_of(&moved, yte)?);
            rep.push(
                seed,
                &tk("sparse"),
                "r2",
                r2_of(&evaluate_frozen_sparse(&sparse, &g, &zt)?, yte)?,
            );
        }
    }
    let transformed = |p: &str| -> Vec<f64> {
        rep.records
            .iter()
            .filter(|r| {
                r.metric == "r2"
                    && r.keys.contains(&("probe".into(), p.into()))
                    && !r.keys.contains(&("transform".into(), "none".into()))
            })
            .map(|r| r.value)
            .collect()
    };
    let quad_tr = transformed("full-quadratic");
    let sparse_tr = transformed("sparse");
    let max_err = rep
        .records
        .iter()
        .filter(|r| r.metric == "max_abs_error")
        .map(|r| r.value)
        .fold(0.0, f64::max);
    let summary = |v: &[f64]| {
        format!(
            "{:.3} ± {:.3}",
            probequot_core::metrics::mean(v),
            probequot_core::metrics::sample_std(v)
        )
    };
    let none = |p: &str| [("probe", p.to_string()), ("transform", "none".to_string())];
    rep.markdown = markdown_table(
        "Exact reparameterization: fitted probes evaluated after affine coordinate change without retraining",
        &[
            "Probe",
            "R² original coordinates",
            "R² transformed coordinates",
            "Max |score error|",
        ],
        &[
            vec![
                "Full quadratic (transported)".into(),
                rep.cell(&none("full-quadratic"), "r2", 4),
                summary(&quad_tr),
                format!("{max_err:.2e}"),
            ],
            vec![
                format!("Sparse top-{sparse_k} (frozen support)"),
                rep.cell(&none("sparse"), "r2", 4),
                summary(&sparse_tr),
                "n/a".into(),
            ],
        ],
    );
    let sparse_mean = probequot_core::metrics::mean(&sparse_tr);
    rep.check(
        "transported full quadratic reproduces scores",
        max_err <= 1e-8,
        format!(
            "max |score error| {max_err:.3e} over {} transforms (≤ 1e-8)",
            quad_tr.len()
        ),
    );
    rep.check(
        "frozen sparse support fails",
        sparse_mean < -5.0,
        format!("mean frozen-sparse R² {sparse_mean:.2} (< −5)"),
    );
    rep.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(rep)
}
