//! Multi-restart minimization of smooth objectives: L-BFGS with a strong-Wolfe
//! line search, and full-batch Adam with early stopping.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Prng};

/// A scalar objective with an analytic gradient.
pub trait DifferentiableObjective {
    fn dim(&self) -> usize;

    /// Returns the loss at `params` and writes the gradient into `grad`.
    fn value_grad(&self, params: &DVector<f64>, grad: &mut DVector<f64>) -> f64;

    fn value(&self, params: &DVector<f64>) -> f64 {
        let mut g = DVector::zeros(self.dim());
        self.value_grad(params, &mut g)
    }
}

/// Adapts a closure into an objective.
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&DVector<f64>, &mut DVector<f64>) -> f64,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> DifferentiableObjective for FnObjective<F>
where
    F: Fn(&DVector<f64>, &mut DVector<f64>) -> f64,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value_grad(&self, params: &DVector<f64>, grad: &mut DVector<f64>) -> f64 {
        (self.f)(params, grad)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    QuasiNewtonWolfe,
    FirstOrderAdaptive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: Method,
    pub restarts: usize,
    /// Iteration cap for L-BFGS, epoch cap for Adam.
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub seed: u64,
    /// Gradient sup-norm stopping tolerance.
    pub tol: f64,
    /// Relative loss-decrease stopping tolerance (L-BFGS only).
    pub ftol: f64,
    pub history: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: Method::QuasiNewtonWolfe,
            restarts: 1,
            max_epochs: 1000,
            learning_rate: 1e-3,
            patience: 30,
            seed: 0,
            tol: 1e-8,
            ftol: 1e3 * f64::EPSILON,
            history: 10,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("max_epochs must be positive".into()));
        }
        if self.method == Method::FirstOrderAdaptive && !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LocalResult {
    pub params: DVector<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct OptimResult {
    pub params: DVector<f64>,
    pub loss: f64,
    /// Index of the selected restart.
    pub restart: usize,
    /// Caller-supplied validation score of the selected restart.
    pub validation: Option<f64>,
    pub iterations: usize,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

struct Probe {
    step: f64,
    phi: f64,
    dphi: f64,
    x: DVector<f64>,
    g: DVector<f64>,
}

fn probe_at<O: DifferentiableObjective + ?Sized>(obj: &O, x0: &DVector<f64>, d: &DVector<f64>, step: f64) -> Probe {
    let x = x0 + d * step;
    let mut g = DVector::zeros(x.len());
    let mut phi = obj.value_grad(&x, &mut g);
    let mut dphi = g.dot(d);
    if !phi.is_finite() || !dphi.is_finite() {
        phi = f64::INFINITY;
        dphi = f64::NAN;
    }
    Probe { step, phi, dphi, x, g }
}

/// Minimizer of the cubic interpolating two probes, or `None` when it is not
/// well defined.
fn cubic_min(a: &Probe, b: &Probe) -> Option<f64> {
    if !(a.phi.is_finite() && b.phi.is_finite() && a.dphi.is_finite() && b.dphi.is_finite()) {
        return None;
    }
    let d1 = a.dphi + b.dphi - 3.0 * (a.phi - b.phi) / (a.step - b.step);
    let rad = d1 * d1 - a.dphi * b.dphi;
    if rad < 0.0 {
        return None;
    }
    let d2 = (b.step - a.step).signum() * rad.sqrt();
    let t = b.step - (b.step - a.step) * (b.dphi + d2 - d1) / (b.dphi - a.dphi + 2.0 * d2);
    t.is_finite().then_some(t)
}

/// Strong-Wolfe line search (bracketing then zoom). Returns `None` if no
/// step with sufficient decrease was found.
fn strong_wolfe<O: DifferentiableObjective + ?Sized>(
    obj: &O,
    x0: &DVector<f64>,
    phi0: f64,
    dphi0: f64,
    d: &DVector<f64>,
    step0: f64,
) -> Option<Probe> {
    let sufficient = |p: &Probe| p.phi <= phi0 + C1 * p.step * dphi0;
    let curvature = |p: &Probe| p.dphi.abs() <= -C2 * dphi0;
    let mut prev = Probe {
        step: 0.0,
        phi: phi0,
        dphi: dphi0,
        x: x0.clone(),
        g: DVector::zeros(0),
    };
    let mut step = step0;
    let mut i = 0;
    let (mut lo, mut hi) = loop {
        let cur = probe_at(obj, x0, d, step);
        if !sufficient(&cur) || (i > 0 && cur.phi >= prev.phi) {
            break (prev, cur);
        }
        if curvature(&cur) {
            return Some(cur);
        }
        if cur.dphi >= 0.0 {
            break (cur, prev);
        }
        i += 1;
        if i == 40 {
            // Step kept growing with sufficient decrease; accept the last one.
            return Some(cur);
        }
        step *= 2.0;
        prev = cur;
    };
    for _ in 0..40 {
        let (a, b) = if lo.step < hi.step {
            (lo.step, hi.step)
        } else {
            (hi.step, lo.step)
        };
        let width = b - a;
        if width <= 1e-16 * b.max(1e-300) {
            break;
        }
        let mut t = cubic_min(&lo, &hi).unwrap_or(0.5 * (a + b));
        if !(t > a + 0.1 * width && t < b - 0.1 * width) {
            t = 0.5 * (a + b);
        }
        let cur = probe_at(obj, x0, d, t);
        if !sufficient(&cur) || cur.phi >= lo.phi {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Some(cur);
            }
            if cur.dphi * (hi.step - lo.step) >= 0.0 {
                hi = std::mem::replace(&mut lo, cur);
            } else {
                lo = cur;
            }
        }
    }
    (lo.step > 0.0 && lo.phi < phi0).then_some(lo)
}

/// L-BFGS from `x0`. Stops when the gradient sup-norm falls below `cfg.tol`,
/// the relative loss decrease falls below `cfg.ftol`, or after
/// `cfg.max_epochs` iterations.
pub fn lbfgs<O: DifferentiableObjective + ?Sized>(
    obj: &O,
    x0: DVector<f64>,
    cfg: &OptimizerConfig,
) -> Result<LocalResult> {
    let n = x0.len();
    let mut x = x0;
    let mut g = DVector::zeros(n);
    let mut f = obj.value_grad(&x, &mut g);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective at the initial point"));
    }
    let m = cfg.history.max(1);
    let mut s_hist: Vec<DVector<f64>> = Vec::with_capacity(m);
    let mut y_hist: Vec<DVector<f64>> = Vec::with_capacity(m);
    let mut rho: Vec<f64> = Vec::with_capacity(m);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_epochs {
        if g.amax() <= cfg.tol {
            converged = true;
            break;
        }
        // Two-loop recursion.
        let mut q = -&g;
        let k = s_hist.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = rho[i] * s_hist[i].dot(&q);
            q.axpy(-alpha[i], &y_hist[i], 1.0);
        }
        if k > 0 {
            let gamma = s_hist[k - 1].dot(&y_hist[k - 1]) / y_hist[k - 1].norm_squared();
            q *= gamma;
        }
        for i in 0..k {
            let beta = rho[i] * y_hist[i].dot(&q);
            q.axpy(alpha[i] - beta, &s_hist[i], 1.0);
        }
        let mut d = q;
        let mut dphi0 = g.dot(&d);
        if !(dphi0 < 0.0) {
            s_hist.clear();
            y_hist.clear();
            rho.clear();
            d = -&g;
            dphi0 = -g.norm_squared();
        }
        let step0 = if s_hist.is_empty() {
            (1.0 / g.norm()).min(1.0)
        } else {
            1.0
        };
        let probe = match strong_wolfe(obj, &x, f, dphi0, &d, step0) {
            Some(p) => p,
            None if !s_hist.is_empty() => {
                s_hist.clear();
                y_hist.clear();
                rho.clear();
                continue;
            }
            None => break,
        };
        iterations += 1;
        let s = &probe.x - &x;
        let yv = &probe.g - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            if s_hist.len() == m {
                s_hist.remove(0);
                y_hist.remove(0);
                rho.remove(0);
            }
            rho.push(1.0 / sy);
            s_hist.push(s);
            y_hist.push(yv);
        }
        let decrease = f - probe.phi;
        x = probe.x;
        g = probe.g;
        f = probe.phi;
        if decrease <= cfg.ftol * f.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(LocalResult {
        params: x,
        loss: f,
        iterations,
        converged,
    })
}

/// Full-batch Adam; stops after `cfg.patience` epochs without a loss
/// improvement and returns the best iterate seen.
pub fn adam<O: DifferentiableObjective + ?Sized>(
    obj: &O,
    x0: DVector<f64>,
    cfg: &OptimizerConfig,
) -> Result<LocalResult> {
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let n = x0.len();
    let mut x = x0;
    let mut g = DVector::zeros(n);
    let mut m = DVector::zeros(n);
    let mut v = DVector::zeros(n);
    let mut best = (f64::INFINITY, x.clone());
    let mut stale = 0;
    let mut epochs = 0;
    for t in 1..=cfg.max_epochs {
        let f = obj.value_grad(&x, &mut g);
        if !f.is_finite() {
            if t == 1 {
                return Err(Error::NonFinite("objective at the initial point"));
            }
            break;
        }
        epochs = t;
        if f < best.0 {
            best = (f, x.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
        if g.amax() <= cfg.tol {
            break;
        }
        m = m * b1 + &g * (1.0 - b1);
        v = v * b2 + g.component_mul(&g) * (1.0 - b2);
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        for i in 0..n {
            x[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
    }
    Ok(LocalResult {
        params: best.1,
        loss: best.0,
        iterations: epochs,
        converged: stale >= cfg.patience,
    })
}

/// Runs `cfg.restarts` independent local minimizations from points drawn by
/// `init`, each on its own random stream derived from `cfg.seed` and the
/// restart index. The winner maximizes `validate` when supplied, otherwise
/// minimizes the training loss.
pub fn optimize<O, S, V>(obj: &O, init: S, validate: Option<V>, cfg: &OptimizerConfig) -> Result<OptimResult>
where
    O: DifferentiableObjective + ?Sized,
    S: Fn(&mut Prng) -> DVector<f64>,
    V: Fn(&DVector<f64>) -> f64,
{
    cfg.validate()?;
    let mut best: Option<OptimResult> = None;
    let mut first_failure = None;
    for r in 0..cfg.restarts {
        let mut g = rng::stream(cfg.seed, r as u64);
        let x0 = init(&mut g);
        if x0.len() != obj.dim() {
            return Err(Error::DimensionMismatch {
                context: "initial parameter vector",
                expected: obj.dim(),
                actual: x0.len(),
            });
        }
        let local = match cfg.method {
            Method::QuasiNewtonWolfe => lbfgs(obj, x0, cfg),
            Method::FirstOrderAdaptive => adam(obj, x0, cfg),
        };
        let local = match local {
            Ok(l) if l.loss.is_finite() => l,
            _ => {
                first_failure.get_or_insert(r);
                continue;
            }
        };
        let score = validate.as_ref().map(|v| v(&local.params));
        let better = match &best {
            None => true,
            Some(b) => match (score, b.validation) {
                (Some(s), Some(bs)) => s > bs || (s == bs && local.loss < b.loss),
                _ => local.loss < b.loss,
            },
        };
        if better {
            best = Some(OptimResult {
                params: local.params,
                loss: local.loss,
                restart: r,
                validation: score,
                iterations: local.iterations,
            });
        }
    }
    best.ok_or(Error::OptimizerFailed {
        restart: first_failure.unwrap_or(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock() -> FnObjective<impl Fn(&DVector<f64>, &mut DVector<f64>) -> f64> {
        FnObjective::new(2, |p: &DVector<f64>, g: &mut DVector<f64>| {
            let (x, y) = (p[0], p[1]);
            g[0] = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x);
            g[1] = 200.0 * (y - x * x);
            (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
        })
    }

    #[test]
    fn convex_quadratic_single_restart() {
        let target = DVector::from_vec(vec![1.5, -2.0, 0.25, 4.0]);
        let t2 = target.clone();
        let obj = FnObjective::new(4, move |p: &DVector<f64>, g: &mut DVector<f64>| {
            let diff = p - &t2;
            g.copy_from(&(&diff * 2.0));
            diff.norm_squared()
        });
        let res = optimize(
            &obj,
            |r| rng::normal_vector(r, 4),
            None::<fn(&DVector<f64>) -> f64>,
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert!((res.params - target).amax() < 1e-8);
    }

    #[test]
    fn rosenbrock_ten_restarts() {
        let cfg = OptimizerConfig {
            restarts: 10,
            max_epochs: 5000,
            ..Default::default()
        };
        let res = optimize(
            &rosenbrock(),
            |r| rng::normal_vector(r, 2) * 2.0,
            None::<fn(&DVector<f64>) -> f64>,
            &cfg,
        )
        .unwrap();
        assert!(res.loss < 1e-6, "loss {}", res.loss);
    }

    #[test]
    fn adam_descends_quadratic() {
        let obj = FnObjective::new(3, |p: &DVector<f64>, g: &mut DVector<f64>| {
            g.copy_from(&(p * 2.0));
            p.norm_squared()
        });
        let cfg = OptimizerConfig {
            method: Method::FirstOrderAdaptive,
            learning_rate: 0.05,
            max_epochs: 2000,
            ..Default::default()
        };
        let res = optimize(
            &obj,
            |r| rng::normal_vector(r, 3),
            None::<fn(&DVector<f64>) -> f64>,
            &cfg,
        )
        .unwrap();
        assert!(res.loss < 1e-4);
    }

    #[test]
    fn all_nonfinite_starts_name_first_restart() {
        let obj = FnObjective::new(1, |_: &DVector<f64>, _: &mut DVector<f64>| f64::NAN);
        let cfg = OptimizerConfig {
            restarts: 3,
            ..Default::default()
        };
        let err = optimize(&obj, |_| DVector::zeros(1), None::<fn(&DVector<f64>) -> f64>, &cfg).unwrap_err();
        assert!(matches!(err, Error::OptimizerFailed { restart: 0 }));
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = OptimizerConfig {
            restarts: 4,
            seed: 9,
            ..Default::default()
        };
        let a = optimize(
            &rosenbrock(),
            |r| rng::normal_vector(r, 2),
            None::<fn(&DVector<f64>) -> f64>,
            &cfg,
        )
        .unwrap();
        let b = optimize(
            &rosenbrock(),
            |r| rng::normal_vector(r, 2),
            None::<fn(&DVector<f64>) -> f64>,
            &cfg,
        )
        .unwrap();
        assert_eq!(a.params, b.params);
        assert!((a.loss - b.loss).abs() <= 1e-12);
    }

    #[test]
    fn validation_overrides_loss_ranking() {
        // Two minima; validation prefers the one with larger first coordinate.
        let obj = FnObjective::new(1, |p: &DVector<f64>, g: &mut DVector<f64>| {
            let x = p[0];
            g[0] = 4.0 * x * (x * x - 1.0) + 0.1;
            (x * x - 1.0).powi(2) + 0.1 * x
        });
        let cfg = OptimizerConfig {
            restarts: 8,
            ..Default::default()
        };
        let by_loss = optimize(
            &obj,
            |r| rng::normal_vector(r, 1) * 2.0,
            None::<fn(&DVector<f64>) -> f64>,
            &cfg,
        )
        .unwrap();
        assert!(by_loss.params[0] < 0.0);
        let by_val = optimize(
            &obj,
            |r| rng::normal_vector(r, 1) * 2.0,
            Some(|p: &DVector<f64>| p[0]),
            &cfg,
        )
        .unwrap();
        assert!(by_val.params[0] > 0.0);
    }
}
