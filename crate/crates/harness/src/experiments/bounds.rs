//! Numerical identity and bound checks over randomized instances: softmax
//! readout symmetry, robust linear alignment, the finite-bank shared-space
//! bound and the margin transfer bound.

use std::time::Instant;

use nalgebra::DMatrix;
use probequot_core::probes::sample_affine;
use probequot_core::quotient::{finite_bank_bound_check, margin_transfer_bound_check};
use probequot_core::rng::{self, derive_seed, Prng};
use probequot_core::symmetry::{recover_common_shift, robust_align, softmax_equivalence_check, ReadoutRealization};
use rand::Rng;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::report::{markdown_table, ExperimentReport};

pub fn softmax_symmetry(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let d = cfg.usize("d", 32)?;
    let classes = cfg.usize("classes", 10)?;
    let points = cfg.usize("points", 1000)?;
    let transforms = cfg.usize("transforms", 100)?;
    let cond = cfg.f64("cond_max", 50.0)?;
    let mut rep = ExperimentReport::new("softmax_symmetry", &[]);
    let mut worst_p: f64 = 0.0;
    let mut worst_c: f64 = 0.0;
    for &seed in &cfg.seeds {
        let mut g = rng::stream(seed, 1);
        let lambda = rng::normal_matrix(&mut g, classes, d);
        let z = rng::normal_matrix(&mut g, points, d);
        let r = ReadoutRealization::new(lambda.clone(), z)?;
        let mut seed_p: f64 = 0.0;
        let mut seed_c: f64 = 0.0;
        for t in 0..transforms {
            let a = sample_affine(d, cond, derive_seed(seed, &format!("softmax-{t}")))?
                .matrix()
                .clone();
            let c = rng::normal_vector(&mut g, d);
            seed_p = seed_p.max(softmax_equivalence_check(&r, &a, &c)?);
            let mut lambda_star = &lambda * a.transpose();
            for mut row in lambda_star.row_iter_mut() {
                row += c.transpose();
            }
            let recovered = recover_common_shift(&lambda, &lambda_star, &a)?;
            seed_c = seed_c.max((recovered - &c).amax());
        }
        rep.push(seed, &[], "max_prob_discrepancy", seed_p);
        rep.push(seed, &[], "max_shift_error", seed_c);
        worst_p = worst_p.max(seed_p);
        worst_c = worst_c.max(seed_c);
    }
    rep.markdown = markdown_table(
        "Softmax readout symmetry under linear reparameterization with a common logit shift",
        &[
            "d",
            "classes",
            "points",
            "transforms per seed",
            "max |Δp|",
            "max shift error",
        ],
        &[vec![
            d.to_string(),
            classes.to_string(),
            points.to_string(),
            transforms.to_string(),
            format!("{worst_p:.2e}"),
            format!("{worst_c:.2e}"),
        ]],
    );
    rep.check(
        "softmax outputs invariant",
        worst_p <= 1e-12,
        format!("max probability discrepancy {worst_p:.3e} (≤ 1e-12)"),
    );
    rep.check(
        "common shift recovered",
        worst_c <= 1e-10,
        format!("max shift recovery error {worst_c:.3e} (≤ 1e-10)"),
    );
    rep.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(rep)
}

fn dims(g: &mut Prng, lo: usize, hi: usize) -> usize {
    g.random_range(lo..=hi)
}

/// One robust-alignment instance: either a near-equivalent pair of
/// realizations or two unrelated ones.
fn alignment_instance(g: &mut Prng) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let d1 = dims(g, 1, 12);
    let d2 = dims(g, 1, 12);
    let n_out = d2 + dims(g, 0, 8);
    let samples = dims(g, 1, 60);
    let lambda1 = rng::normal_matrix(g, n_out, d1);
    let gamma1 = rng::normal_matrix(g, samples, d1);
    if g.random_bool(0.5) {
        let lambda2 = rng::normal_matrix(g, n_out, d2);
        let gamma2 = rng::normal_matrix(g, samples, d2) * g.random_range(0.1..3.0);
        (lambda1, lambda2, gamma1, gamma2)
    } else {
        // Λ2 = Λ1 B + noise, γ2 ≈ B⁺γ1 + noise.
        let b = rng::normal_matrix(g, d1, d2);
        let eps = 10f64.powf(g.random_range(-8.0..0.0));
        let lambda2 = &lambda1 * &b + rng::normal_matrix(g, n_out, d2) * eps;
        let pinv = probequot_core::linalg::pinv(&b, 1e-12);
        let gamma2 = &gamma1 * pinv.transpose() + rng::normal_matrix(g, samples, d2) * eps;
        (lambda1, lambda2, gamma1, gamma2)
    }
}

pub fn robust_alignment_property(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let instances = cfg.usize("instances", 1000)?;
    let slack = cfg.f64("slack", 1e-12)?;
    let mut rep = ExperimentReport::new("robust_alignment_property", &[]);
    let mut violations = 0usize;
    let mut skipped = 0usize;
    let mut worst_ratio: f64 = 0.0;
    for &seed in &cfg.seeds {
        let mut g = rng::stream(seed, 0xa11);
        let mut seed_viol = 0usize;
        for _ in 0..instances {
            let (l1, l2, g1, g2) = alignment_instance(&mut g);
            let r = match robust_align(&l1, &l2, &g1, &g2) {
                Ok(r) => r,
                Err(_) => {
                    skipped += 1;
                    continue;
                }
            };
            if !r.holds(slack) {
                seed_viol += 1;
            }
            if r.bound > 0.0 {
                worst_ratio = worst_ratio.max(r.mean_hidden_error / r.bound);
            }
        }
        rep.push(seed, &[], "violations", seed_viol as f64);
        violations += seed_viol;
    }
    let total = instances * cfg.seeds.len();
    rep.markdown = markdown_table(
        "Robust linear alignment: hidden-state error against the output-discrepancy bound",
        &[
            "instances",
            "rank-deficient (skipped)",
            "violations",
            "max error / bound",
        ],
        &[vec![
            total.to_string(),
            skipped.to_string(),
            violations.to_string(),
            format!("{worst_ratio:.6}"),
        ]],
    );
    rep.check(
        "alignment bound never violated",
        violations == 0 && skipped < total,
        format!(
            "{violations} violations in {} checked instances (slack {slack:e}); max error/bound {worst_ratio:.6}",
            total - skipped
        ),
    );
    rep.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(rep)
}

/// Finite-bank instance: two banks over possibly different hidden spaces,
/// paired samples, and a score re-basing `M`. Half of the instances are
/// near-equivalent (second space a noisy linear image of the first).
type BankInstance = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);

fn bank_instance(g: &mut Prng) -> BankInstance {
    let d1 = dims(g, 2, 12);
    let d2 = dims(g, 2, 12);
    let k1 = dims(g, 1, 10);
    let k2 = dims(g, 1, 10);
    let samples = dims(g, 2, 50);
    let mut w1 = rng::normal_matrix(g, k1, d1);
    if k1 > 1 && g.random_bool(0.25) {
        // Duplicate a row so the bank is rank deficient.
        let row = w1.row(0).into_owned();
        w1.row_mut(k1 - 1).copy_from(&row);
    }
    let h1 = rng::normal_matrix(g, samples, d1);
    let m = rng::normal_matrix(g, k1, k2);
    if g.random_bool(0.5) {
        (
            w1,
            rng::normal_matrix(g, k2, d2),
            h1,
            rng::normal_matrix(g, samples, d2),
            m,
        )
    } else {
        let b = rng::normal_matrix(g, d1, d2);
        let eps = 10f64.powf(g.random_range(-6.0..0.0));
        let h2 = &h1 * &b + rng::normal_matrix(g, samples, d2) * eps;
        (w1, rng::normal_matrix(g, k2, d2), h1, h2, m)
    }
}

fn margin_instance(g: &mut Prng) -> (Vec<f64>, Vec<f64>, f64) {
    let n = dims(g, 1, 500);
    let shift = g.random_range(-1.0..1.0);
    let scale = 10f64.powf(g.random_range(-2.0..1.0));
    let f: Vec<f64> = (0..n).map(|_| rng::normal(g) + shift).collect();
    let ft = f.iter().map(|v| v + scale * rng::normal(g)).collect();
    let gamma = 10f64.powf(g.random_range(-2.0..1.0));
    (f, ft, gamma)
}

pub fn finite_bank_bounds(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let instances = cfg.usize("instances", 1000)?;
    let slack = cfg.f64("slack", 1e-9)?;
    let mut rep = ExperimentReport::new("finite_bank_bounds", &["bound"]);
    let (mut bank_viol, mut margin_viol) = (0usize, 0usize);
    let mut max_pointwise: f64 = 0.0;
    let mut tight: f64 = 0.0;
    for &seed in &cfg.seeds {
        let mut g = rng::stream(seed, 0xb4);
        let mut v = 0usize;
        for _ in 0..instances {
            let (w1, w2, h1, h2, m) = bank_instance(&mut g);
            let c = finite_bank_bound_check(&w1, &w2, &h1, &h2, &m)?;
            max_pointwise = max_pointwise.max(c.pointwise_error);
            if c.rhs > 0.0 {
                tight = tight.max(c.lhs / c.rhs);
            }
            if !c.holds(slack) {
                v += 1;
            }
        }
        rep.push(seed, &[("bound", "finite-bank".into())], "violations", v as f64);
        bank_viol += v;
        let mut g = rng::stream(seed, 0xb5);
        let mut v = 0usize;
        for _ in 0..instances {
            let (f, ft, gamma) = margin_instance(&mut g);
            if !margin_transfer_bound_check(&f, &ft, gamma)?.holds() {
                v += 1;
            }
        }
        rep.push(seed, &[("bound", "margin".into())], "violations", v as f64);
        margin_viol += v;
    }
    let total = instances * cfg.seeds.len();
    rep.markdown = markdown_table(
        "Finite-bank shared-space and margin transfer bounds on randomized instances",
        &["Bound", "Instances", "Violations", "Notes"],
        &[
            vec![
                "Finite-bank shared space".into(),
                total.to_string(),
                bank_viol.to_string(),
                format!("max lhs/rhs {tight:.6}; max pointwise identity error {max_pointwise:.2e}"),
            ],
            vec![
                "Margin transfer".into(),
                total.to_string(),
                margin_viol.to_string(),
                String::new(),
            ],
        ],
    );
    rep.check(
        "finite-bank bound holds",
        bank_viol == 0,
        format!("{bank_viol} violations in {total} instances"),
    );
    rep.check(
        "margin bound holds",
        margin_viol == 0,
        format!("{margin_viol} violations in {total} instances"),
    );
    rep.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(rep)
}
