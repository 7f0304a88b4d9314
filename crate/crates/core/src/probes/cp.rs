//! Affine-completed low-rank CP probes
//! `p(z) = Σ_r α_r Π_j (⟨v_rj, z⟩ + b_rj) + g(z)` with a degree-(m−1) tail `g`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::affine::AffineTransform;
use super::{Target, Task};
use crate::error::{check_dim, Error, Result};
use crate::estimators::{optimize, sigmoid, DifferentiableObjective, OptimizerConfig};
use crate::polyfeat::PolyFeatureMap;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpProbe {
    pub degree: usize,
    pub rank: usize,
    /// `n × (R·m)`; column `r·m + j` is the factor vector `v_rj`.
    pub factor_vectors: DMatrix<f64>,
    /// Length `R·m`, same layout as the columns of `factor_vectors`.
    pub factor_biases: DVector<f64>,
    pub term_weights: DVector<f64>,
    pub tail_map: PolyFeatureMap,
    pub tail: DVector<f64>,
    pub task: Task,
}

/// Number of free parameters of a degree-`m`, rank-`R` probe in `n` variables.
pub fn cp_param_count(n: usize, m: usize, rank: usize) -> Result<usize> {
    let tail = PolyFeatureMap::new(n, m.saturating_sub(1))?.len();
    Ok(rank * m * (n + 1) + rank + tail)
}

impl CpProbe {
    pub fn input_dim(&self) -> usize {
        self.factor_vectors.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.factor_vectors.len() + self.factor_biases.len() + self.term_weights.len() + self.tail.len()
    }

    fn layout(n: usize, m: usize, rank: usize, tail_len: usize) -> [usize; 4] {
        let v = n * rank * m;
        let b = rank * m;
        [v, v + b, v + b + rank, v + b + rank + tail_len]
    }

    /// Packs parameters as `[vec(V); b; α; tail]`.
    pub fn to_params(&self) -> DVector<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend_from_slice(self.factor_vectors.as_slice());
        p.extend_from_slice(self.factor_biases.as_slice());
        p.extend_from_slice(self.term_weights.as_slice());
        p.extend_from_slice(self.tail.as_slice());
        DVector::from_vec(p)
    }

    fn from_params(n: usize, m: usize, rank: usize, tail_map: PolyFeatureMap, task: Task, p: &DVector<f64>) -> Self {
        let [v, b, a, t] = Self::layout(n, m, rank, tail_map.len());
        Self {
            degree: m,
            rank,
            factor_vectors: DMatrix::from_column_slice(n, rank * m, &p.as_slice()[..v]),
            factor_biases: DVector::from_column_slice(&p.as_slice()[v..b]),
            term_weights: DVector::from_column_slice(&p.as_slice()[b..a]),
            tail: DVector::from_column_slice(&p.as_slice()[a..t]),
            tail_map,
            task,
        }
    }

    pub fn score(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_dim("CP probe input columns", self.input_dim(), x.ncols())?;
        let phi = self.tail_map.expand(x)?;
        Ok(forward(x, &phi, self).0)
    }

    /// Re-expresses the probe in coordinates `z' = Az + t`:
    /// `v' = A⁻ᵀv`, `b' = b − ⟨v', t⟩`, and the tail transported likewise.
    /// Rank is unchanged.
    pub fn transport(&self, g: &AffineTransform) -> Result<Self> {
        check_dim("transport dimension", self.input_dim(), g.dim())?;
        let ainv_t = g.inverse_matrix().transpose();
        let factor_vectors = &ainv_t * &self.factor_vectors;
        let factor_biases = &self.factor_biases - factor_vectors.transpose() * g.shift();
        let tail = transport_polynomial(&self.tail_map, &self.tail, g)?;
        Ok(Self {
            factor_vectors,
            factor_biases,
            tail,
            ..self.clone()
        })
    }
}

/// Transports tail coefficients of degree ≤ 2.
fn transport_polynomial(map: &PolyFeatureMap, coef: &DVector<f64>, g: &AffineTransform) -> Result<DVector<f64>> {
    if map.max_degree() > 2 {
        return Err(Error::InvalidArgument(
            "CP transport supports tails of degree ≤ 2 (probe degree ≤ 3)".into(),
        ));
    }
    let form = super::polynomial::QuadraticForm::from_coefficients(map, coef)?;
    form.transport(g).to_coefficients(map)
}

/// Returns `(scores, F, products)` with `F = XV + 1bᵀ` and `products[:, r] = Π_j F[:, rm+j]`.
fn forward(x: &DMatrix<f64>, phi: &DMatrix<f64>, p: &CpProbe) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let m = p.degree;
    let mut f = x * &p.factor_vectors;
    for (c, mut col) in f.column_iter_mut().enumerate() {
        col.add_scalar_mut(p.factor_biases[c]);
    }
    let mut prods = DMatrix::from_element(x.nrows(), p.rank, 1.0);
    for r in 0..p.rank {
        for j in 0..m {
            let col = f.column(r * m + j).clone_owned();
            prods.column_mut(r).component_mul_assign(&col);
        }
    }
    let scores = &prods * &p.term_weights + phi * &p.tail;
    (scores, f, prods)
}

struct CpObjective<'a> {
    x: &'a DMatrix<f64>,
    phi: DMatrix<f64>,
    y: Vec<f64>,
    task: Task,
    n: usize,
    m: usize,
    rank: usize,
    tail_map: PolyFeatureMap,
}

impl CpObjective<'_> {
    fn unpack(&self, p: &DVector<f64>) -> CpProbe {
        CpProbe::from_params(self.n, self.m, self.rank, self.tail_map.clone(), self.task, p)
    }
}

impl DifferentiableObjective for CpObjective<'_> {
    fn dim(&self) -> usize {
        CpProbe::layout(self.n, self.m, self.rank, self.tail_map.len())[3]
    }

    fn value_grad(&self, params: &DVector<f64>, grad: &mut DVector<f64>) -> f64 {
        let probe = self.unpack(params);
        let (scores, f, prods) = forward(self.x, &self.phi, &probe);
        let rows = self.x.nrows() as f64;
        // Residual derivative e_i = dℓ/dŷ_i / N.
        let mut loss = 0.0;
        let mut e = DVector::zeros(scores.len());
        for (i, (s, y)) in scores.iter().zip(&self.y).enumerate() {
            match self.task {
                Task::Regression => {
                    let r = s - y;
                    loss += r * r;
                    e[i] = 2.0 * r / rows;
                }
                Task::Classification => {
                    loss += s.max(0.0) + (-s.abs()).exp().ln_1p() - y * s;
                    e[i] = (sigmoid(*s) - y) / rows;
                }
            }
        }
        let (m, rank) = (self.m, self.rank);
        // G[:, rm+j] = e ⊙ α_r Π_{j'≠j} F[:, rm+j'].
        let mut gmat = DMatrix::zeros(f.nrows(), rank * m);
        for r in 0..rank {
            for j in 0..m {
                let mut col = e.clone() * probe.term_weights[r];
                for jj in 0..m {
                    if jj != j {
                        col.component_mul_assign(&f.column(r * m + jj));
                    }
                }
                gmat.set_column(r * m + j, &col);
            }
        }
        let [v_end, b_end, a_end, t_end] = CpProbe::layout(self.n, m, rank, self.tail_map.len());
        let mut gv = DMatrix::zeros(self.n, rank * m);
        gv.gemm_tr(1.0, self.x, &gmat, 0.0);
        grad.rows_mut(0, v_end).copy_from_slice(gv.as_slice());
        for c in 0..rank * m {
            grad[v_end + c] = gmat.column(c).sum();
        }
        for r in 0..rank {
            grad[b_end + r] = prods.column(r).dot(&e);
        }
        let mut gt = grad.rows_mut(a_end, t_end - a_end);
        gt.gemv_tr(1.0, &self.phi, &e, 0.0);
        loss / rows
    }
}

/// Validation data and scoring used to pick the best restart (higher is better).
pub struct CpValidation<'a> {
    pub x: &'a DMatrix<f64>,
    pub score: &'a dyn Fn(&DVector<f64>) -> f64,
}

/// Fits an affine-completed CP probe by multi-restart optimization of the
/// mean squared (regression) or logistic (classification) loss.
///
/// Initialization: factor vectors `N(0, 1/n)`, biases 0, term weights 1, tail 0.
pub fn fit_cp(
    x: &DMatrix<f64>,
    target: Target<'_>,
    degree: usize,
    rank: usize,
    opt: &OptimizerConfig,
    validation: Option<CpValidation<'_>>,
) -> Result<CpProbe> {
    if degree == 0 || rank == 0 {
        return Err(Error::InvalidArgument("CP degree and rank must be at least 1".into()));
    }
    let (task, y) = target.as_real();
    check_dim("CP targets vs rows", x.nrows(), y.len())?;
    if x.nrows() == 0 {
        return Err(Error::Empty("CP design matrix"));
    }
    let n = x.ncols();
    let tail_map = PolyFeatureMap::new(n, degree - 1)?;
    let obj = CpObjective {
        x,
        phi: tail_map.expand(x)?,
        y,
        task,
        n,
        m: degree,
        rank,
        tail_map: tail_map.clone(),
    };
    let [v_end, b_end, a_end, t_end] = CpProbe::layout(n, degree, rank, tail_map.len());
    let scale = 1.0 / (n as f64).sqrt();
    let init = |g: &mut rng::Prng| {
        let mut p = DVector::zeros(t_end);
        for i in 0..v_end {
            p[i] = rng::normal(g) * scale;
        }
        for i in b_end..a_end {
            p[i] = 1.0;
        }
        p
    };
    let res = match &validation {
        Some(v) => {
            let val_phi = tail_map.expand(v.x)?;
            let check = |p: &DVector<f64>| {
                let probe = obj.unpack(p);
                let (s, _, _) = forward(v.x, &val_phi, &probe);
                let out = (v.score)(&s);
                if out.is_finite() {
                    out
                } else {
                    f64::NEG_INFINITY
                }
            };
            optimize(&obj, init, Some(check), opt)?
        }
        None => optimize(&obj, init, None::<fn(&DVector<f64>) -> f64>, opt)?,
    };
    Ok(obj.unpack(&res.params))
}

/// Relative eigenvalue floor used by [`fit_cp_whitened`].
pub const WHITEN_FLOOR: f64 = 1e-8;

/// [`fit_cp`] in PCA-whitened coordinates, transported back to the input
/// coordinates. The fitted function is the same family; only the
/// optimizer's conditioning changes.
pub fn fit_cp_whitened(
    x: &DMatrix<f64>,
    target: Target<'_>,
    degree: usize,
    rank: usize,
    opt: &OptimizerConfig,
    validation: Option<CpValidation<'_>>,
) -> Result<CpProbe> {
    let g = super::affine::whitening(x, WHITEN_FLOOR)?;
    let xw = g.apply(x)?;
    let fitted = match validation {
        Some(v) => {
            let vw = g.apply(v.x)?;
            fit_cp(
                &xw,
                target,
                degree,
                rank,
                opt,
                Some(CpValidation { x: &vw, score: v.score }),
            )?
        }
        None => fit_cp(&xw, target, degree, rank, opt, None)?,
    };
    fitted.transport(&g.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::r2;
    use crate::probes::affine::sample_affine;

    fn random_probe(n: usize, m: usize, rank: usize, seed: u64) -> CpProbe {
        let tail_map = PolyFeatureMap::new(n, m - 1).unwrap();
        let len = CpProbe::layout(n, m, rank, tail_map.len())[3];
        let p = rng::normal_vector(&mut rng::stream(seed, 0), len);
        CpProbe::from_params(n, m, rank, tail_map, Task::Regression, &p)
    }

    #[test]
    fn parameter_count_formula() {
        for (n, r) in [(64usize, 1usize), (64, 16), (5, 3)] {
            let expect = 2 * r * (n + 1) + r + (n + 1);
            assert_eq!(cp_param_count(n, 2, r).unwrap(), expect);
        }
        assert_eq!(cp_param_count(64, 2, 1).unwrap(), 196);
    }

    #[test]
    fn gradient_matches_central_differences() {
        for (task, m) in [(Task::Regression, 2), (Task::Classification, 2), (Task::Regression, 3)] {
            let n = 4;
            let rank = 2;
            let mut g = rng::stream(11, m as u64);
            let x = rng::normal_matrix(&mut g, 25, n);
            let y: Vec<f64> = match task {
                Task::Regression => (0..25).map(|_| rng::normal(&mut g)).collect(),
                Task::Classification => (0..25).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect(),
            };
            let tail_map = PolyFeatureMap::new(n, m - 1).unwrap();
            let obj = CpObjective {
                x: &x,
                phi: tail_map.expand(&x).unwrap(),
                y,
                task,
                n,
                m,
                rank,
                tail_map,
            };
            for trial in 0..10 {
                let p = rng::normal_vector(&mut rng::stream(trial, 7), obj.dim()) * 0.5;
                let mut grad = DVector::zeros(obj.dim());
                obj.value_grad(&p, &mut grad);
                for k in 0..obj.dim() {
                    let h = 1e-6;
                    let mut pp = p.clone();
                    pp[k] += h;
                    let up = obj.value(&pp);
                    pp[k] -= 2.0 * h;
                    let down = obj.value(&pp);
                    let fd = (up - down) / (2.0 * h);
                    let tol = 1e-5 * fd.abs().max(grad[k].abs()).max(1e-3);
                    assert!((fd - grad[k]).abs() <= tol, "k={k} fd={fd} an={}", grad[k]);
                }
            }
        }
    }

    #[test]
    fn transport_preserves_scores_and_rank() {
        let p = random_probe(6, 2, 3, 1);
        let x = rng::normal_matrix(&mut rng::stream(2, 0), 1000, 6);
        let base = p.score(&x).unwrap();
        let g = sample_affine(6, 50.0, 4).unwrap();
        let moved = p.transport(&g).unwrap();
        assert_eq!(moved.rank, p.rank);
        let err = (moved.score(&g.apply(&x).unwrap()).unwrap() - base).amax();
        assert!(err <= 1e-10, "{err}");
        let same = p.transport(&AffineTransform::identity(6)).unwrap();
        assert!((same.to_params() - p.to_params()).amax() < 1e-14);
    }

    #[test]
    fn cubic_transport() {
        let p = random_probe(3, 3, 2, 5);
        let x = rng::normal_matrix(&mut rng::stream(6, 0), 200, 3);
        let g = sample_affine(3, 10.0, 7).unwrap();
        let moved = p.transport(&g).unwrap();
        let err = (moved.score(&g.apply(&x).unwrap()).unwrap() - p.score(&x).unwrap()).amax();
        assert!(err <= 1e-9, "{err}");
    }

    #[test]
    fn linear_target_absorbed_by_tail() {
        let mut g = rng::stream(3, 0);
        let x = rng::normal_matrix(&mut g, 400, 5);
        let c = rng::normal_vector(&mut g, 5);
        let y: Vec<f64> = (&x * &c).iter().copied().collect();
        let cfg = OptimizerConfig {
            restarts: 2,
            max_epochs: 500,
            ..Default::default()
        };
        let p = fit_cp(&x, Target::Regression(&y), 2, 1, &cfg, None).unwrap();
        let s = p.score(&x).unwrap();
        assert!(r2(s.as_slice(), &y).unwrap() >= 0.999);
    }

    #[test]
    fn whitened_fit_matches_in_input_coordinates() {
        let mut g = rng::stream(9, 0);
        let z = rng::normal_matrix(&mut g, 600, 5);
        let warp = sample_affine(5, 50.0, 3).unwrap();
        let x = warp.apply(&z).unwrap();
        let y: Vec<f64> = (0..600).map(|i| z[(i, 0)] * z[(i, 1)] + z[(i, 2)]).collect();
        let cfg = OptimizerConfig {
            restarts: 2,
            max_epochs: 1000,
            ..Default::default()
        };
        let p = fit_cp_whitened(&x, Target::Regression(&y), 2, 1, &cfg, None).unwrap();
        assert_eq!(p.input_dim(), 5);
        assert!(r2(p.score(&x).unwrap().as_slice(), &y).unwrap() >= 0.999);
    }

    #[test]
    fn exact_rank_one_target() {
        let mut g = rng::stream(4, 0);
        let x = rng::normal_matrix(&mut g, 500, 6);
        let a = rng::normal_vector(&mut g, 6);
        let b = rng::normal_vector(&mut g, 6);
        let y: Vec<f64> = (0..500)
            .map(|i| (x.row(i).dot(&a.transpose()) + 0.5) * (x.row(i).dot(&b.transpose()) - 1.0))
            .collect();
        let cfg = OptimizerConfig {
            restarts: 3,
            max_epochs: 2000,
            ..Default::default()
        };
        let p = fit_cp(&x, Target::Regression(&y), 2, 1, &cfg, None).unwrap();
        assert!(r2(p.score(&x).unwrap().as_slice(), &y).unwrap() >= 0.999);
    }
}
