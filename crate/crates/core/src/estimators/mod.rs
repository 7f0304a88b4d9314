//! Supervised fitting primitives: closed-form Ridge regression, L2-penalized
//! logistic regression, and the multi-restart optimizer shared by the
//! non-convex probe families.

pub mod optim;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg;
pub use optim::{
    adam, lbfgs, optimize, DifferentiableObjective, FnObjective, LocalResult, Method, OptimResult, OptimizerConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeConfig {
    pub alpha: f64,
    pub fit_intercept: bool,
    /// Store the training mean and express the intercept relative to it.
    /// Predictions are the same either way.
    #[serde(default)]
    pub center: bool,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            fit_intercept: true,
            center: false,
        }
    }
}

impl RidgeConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    /// Inverse regularization strength `C`.
    pub inverse_reg: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub fit_intercept: bool,
    #[serde(default)]
    pub center: bool,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            inverse_reg: 1.0,
            max_iter: 5000,
            tol: 1e-8,
            fit_intercept: true,
            center: false,
        }
    }
}

/// Relative loss-decrease tolerance for the logistic solver (`1e7 · eps`).
pub const LOGISTIC_FTOL: f64 = 1e7 * f64::EPSILON;

/// Affine scorer `x ↦ ⟨x − train_mean, weights⟩ + intercept`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: DVector<f64>,
    pub intercept: f64,
    pub train_mean: DVector<f64>,
}

impl LinearModel {
    pub fn new(weights: DVector<f64>, intercept: f64) -> Self {
        let d = weights.len();
        Self {
            weights,
            intercept,
            train_mean: DVector::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Intercept in uncentered coordinates.
    pub fn effective_intercept(&self) -> f64 {
        self.intercept - self.train_mean.dot(&self.weights)
    }

    pub fn decision_function(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_dim("linear model input columns", self.dim(), x.ncols())?;
        let mut out = x * &self.weights;
        out.add_scalar_mut(self.effective_intercept());
        Ok(out)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<bool>> {
        Ok(self.decision_function(x)?.iter().map(|s| *s > 0.0).collect())
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self.decision_function(x)?.iter().map(|s| sigmoid(*s)).collect())
    }
}

/// Multi-output affine map `x ↦ (x − train_mean)ᵀ W + intercept`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiLinearModel {
    /// `d_in × d_out`.
    pub weights: DMatrix<f64>,
    pub intercept: DVector<f64>,
    pub train_mean: DVector<f64>,
}

impl MultiLinearModel {
    pub fn effective_intercept(&self) -> DVector<f64> {
        &self.intercept - self.weights.transpose() * &self.train_mean
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("multi-output model input columns", self.weights.nrows(), x.ncols())?;
        let mut out = x * &self.weights;
        let b = self.effective_intercept();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(b[j]);
        }
        Ok(out)
    }

    /// Column `j` as a single-output model.
    pub fn output(&self, j: usize) -> LinearModel {
        LinearModel {
            weights: self.weights.column(j).into_owned(),
            intercept: self.intercept[j],
            train_mean: self.train_mean.clone(),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Multi-output Ridge regression, minimizing `‖XW + 1bᵀ − Y‖² + α‖W‖²` with
/// an unpenalized intercept.
pub fn fit_ridge_multi(x: &DMatrix<f64>, y: &DMatrix<f64>, cfg: &RidgeConfig) -> Result<MultiLinearModel> {
    let (n, d) = x.shape();
    check_dim("ridge targets vs rows", n, y.nrows())?;
    if n == 0 {
        return Err(Error::Empty("ridge design matrix"));
    }
    if cfg.fit_intercept && n < 2 {
        return Err(Error::Degenerate("ridge with intercept needs at least two rows".into()));
    }
    if !(cfg.alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ridge alpha {} must be non-negative",
            cfg.alpha
        )));
    }
    check_finite("ridge design matrix", x.iter())?;
    check_finite("ridge targets", y.iter())?;
    let (x_mean, y_mean) = if cfg.fit_intercept {
        (linalg::column_means(x), linalg::column_means(y))
    } else {
        (DVector::zeros(d), DVector::zeros(y.ncols()))
    };
    let xc = if cfg.fit_intercept {
        linalg::center_rows(x, &x_mean)
    } else {
        x.clone()
    };
    let yc = if cfg.fit_intercept {
        linalg::center_rows(y, &y_mean)
    } else {
        y.clone()
    };
    let weights = if d <= n {
        let mut g = linalg::gram(&xc);
        for i in 0..d {
            g[(i, i)] += cfg.alpha;
        }
        let rhs = xc.transpose() * &yc;
        linalg::spd_solve(&g, &rhs)
    } else {
        // Dual form: W = Xᵀ (XXᵀ + αI)⁻¹ Y.
        let xt = xc.transpose();
        let mut k = &xc * &xt;
        for i in 0..n {
            k[(i, i)] += cfg.alpha;
        }
        xt * linalg::spd_solve(&k, &yc)
    };
    check_finite("ridge solution", weights.iter())?;
    let (intercept, train_mean) = if cfg.center {
        (y_mean, x_mean)
    } else {
        (&y_mean - weights.transpose() * &x_mean, DVector::zeros(d))
    };
    Ok(MultiLinearModel {
        weights,
        intercept,
        train_mean,
    })
}

/// Ridge regression for a single target.
pub fn fit_ridge(x: &DMatrix<f64>, y: &[f64], cfg: &RidgeConfig) -> Result<LinearModel> {
    let ym = DMatrix::from_column_slice(y.len(), 1, y);
    Ok(fit_ridge_multi(x, &ym, cfg)?.output(0))
}

/// Mean logistic loss plus `‖w‖² / (2CN)`; parameters are `[w; b]`.
struct LogisticObjective<'a> {
    x: &'a DMatrix<f64>,
    y: Vec<f64>,
    penalty: f64,
    fit_intercept: bool,
}

impl DifferentiableObjective for LogisticObjective<'_> {
    fn dim(&self) -> usize {
        self.x.ncols() + 1
    }

    fn value_grad(&self, params: &DVector<f64>, grad: &mut DVector<f64>) -> f64 {
        let d = self.x.ncols();
        let n = self.x.nrows() as f64;
        let w = params.rows(0, d);
        let b = if self.fit_intercept { params[d] } else { 0.0 };
        let mut z = self.x * w;
        let mut loss = 0.0;
        for (zi, yi) in z.iter_mut().zip(&self.y) {
            let s = *zi + b;
            loss += softplus(s) - yi * s;
            *zi = (sigmoid(s) - yi) / n;
        }
        let mut gw = grad.rows_mut(0, d);
        gw.gemv_tr(1.0, self.x, &z, 0.0);
        gw.axpy(2.0 * self.penalty, &w, 1.0);
        grad[d] = if self.fit_intercept { z.sum() } else { 0.0 };
        loss / n + self.penalty * w.norm_squared()
    }
}

/// L2-penalized logistic regression solved with L-BFGS from the origin.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[bool], cfg: &LogisticConfig) -> Result<LinearModel> {
    let (n, d) = x.shape();
    check_dim("logistic labels vs rows", n, y.len())?;
    if !y.iter().any(|v| *v) || y.iter().all(|v| *v) {
        return Err(Error::SingleClass);
    }
    if !(cfg.inverse_reg > 0.0) || !(cfg.tol > 0.0) || cfg.max_iter == 0 {
        return Err(Error::InvalidArgument(
            "logistic config needs C > 0, tol > 0, max_iter > 0".into(),
        ));
    }
    check_finite("logistic design matrix", x.iter())?;
    let mean = if cfg.fit_intercept {
        linalg::column_means(x)
    } else {
        DVector::zeros(d)
    };
    let xc = if cfg.fit_intercept {
        linalg::center_rows(x, &mean)
    } else {
        x.clone()
    };
    let obj = LogisticObjective {
        x: &xc,
        y: y.iter().map(|v| if *v { 1.0 } else { 0.0 }).collect(),
        penalty: 0.5 / (cfg.inverse_reg * n as f64),
        fit_intercept: cfg.fit_intercept,
    };
    let ocfg = OptimizerConfig {
        max_epochs: cfg.max_iter,
        tol: cfg.tol,
        ftol: LOGISTIC_FTOL,
        history: 10,
        ..Default::default()
    };
    let res = lbfgs(&obj, DVector::zeros(d + 1), &ocfg)?;
    let weights = res.params.rows(0, d).into_owned();
    let b = res.params[d];
    check_finite("logistic solution", weights.iter())?;
    Ok(if cfg.center {
        LinearModel {
            weights,
            intercept: b,
            train_mean: mean,
        }
    } else {
        let intercept = b - mean.dot(&weights);
        LinearModel::new(weights, intercept)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{metrics, rng};

    #[test]
    fn ridge_exact_line() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let m = fit_ridge(&x, &[2.0, 4.0, 6.0], &RidgeConfig::with_alpha(0.0)).unwrap();
        assert!((m.weights[0] - 2.0).abs() < 1e-12);
        assert!(m.effective_intercept().abs() < 1e-12);
    }

    #[test]
    fn ridge_constant_target() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let m = fit_ridge(&x, &[1.0, 1.0], &RidgeConfig::with_alpha(0.0)).unwrap();
        assert!(m.weights[0].abs() < 1e-12);
        assert!((m.effective_intercept() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ridge_rejects_empty_and_nonfinite() {
        assert!(fit_ridge(&DMatrix::zeros(0, 2), &[], &RidgeConfig::default()).is_err());
        let mut x = DMatrix::from_element(3, 1, 1.0);
        x[(1, 0)] = f64::NAN;
        assert!(matches!(
            fit_ridge(&x, &[1.0, 2.0, 3.0], &RidgeConfig::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn centered_and_uncentered_models_agree() {
        let mut g = rng::stream(3, 0);
        let x = rng::normal_matrix(&mut g, 40, 3).add_scalar(5.0);
        let y: Vec<f64> = (0..40)
            .map(|i| x[(i, 0)] - 2.0 * x[(i, 2)] + rng::normal(&mut g))
            .collect();
        let a = fit_ridge(&x, &y, &RidgeConfig::default()).unwrap();
        let b = fit_ridge(
            &x,
            &y,
            &RidgeConfig {
                center: true,
                ..Default::default()
            },
        )
        .unwrap();
        let diff = (a.decision_function(&x).unwrap() - b.decision_function(&x).unwrap()).amax();
        assert!(diff < 1e-10);
        assert!(b.train_mean.iter().all(|m| (m - 5.0).abs() < 1.0));
    }

    #[test]
    fn ridge_is_bitwise_deterministic() {
        let mut g = rng::stream(5, 0);
        let x = rng::normal_matrix(&mut g, 30, 4);
        let y: Vec<f64> = (0..30).map(|_| rng::normal(&mut g)).collect();
        let a = fit_ridge(&x, &y, &RidgeConfig::default()).unwrap();
        let b = fit_ridge(&x, &y, &RidgeConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn logistic_separable_1d() {
        let x = DMatrix::from_column_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let y = [false, false, false, true, true, true];
        let m = fit_logistic(&x, &y, &LogisticConfig::default()).unwrap();
        assert_eq!(m.predict(&x).unwrap(), y.to_vec());
    }

    #[test]
    fn logistic_single_class_is_an_error() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert!(matches!(
            fit_logistic(&x, &[true; 3], &LogisticConfig::default()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn logistic_reaches_stationarity() {
        let mut g = rng::stream(8, 0);
        let x = rng::normal_matrix(&mut g, 200, 5);
        let y: Vec<bool> = (0..200).map(|i| x[(i, 0)] + 0.5 * rng::normal(&mut g) > 0.0).collect();
        let cfg = LogisticConfig::default();
        let m = fit_logistic(&x, &y, &cfg).unwrap();
        // Gradient of the objective at the returned point, via the uncentered form.
        let s = m.decision_function(&x).unwrap();
        let n = 200.0;
        let r: Vec<f64> = s
            .iter()
            .zip(&y)
            .map(|(s, y)| sigmoid(*s) - if *y { 1.0 } else { 0.0 })
            .collect();
        for j in 0..5 {
            let gj: f64 = (0..200).map(|i| x[(i, j)] * r[i]).sum::<f64>() / n + m.weights[j] / n;
            assert!(gj.abs() < 1e-6, "grad[{j}] = {gj}");
        }
        assert!(r.iter().sum::<f64>().abs() / n < 1e-6);
        let auc = metrics::auroc(s.as_slice(), &y).unwrap();
        assert!(auc > 0.8);
    }
}
