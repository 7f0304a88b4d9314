//! Dense polynomial probes over the full monomial basis, and the exact
//! affine transport of degree ≤ 2 probes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::affine::AffineTransform;
use super::{FitConfig, Target, Task};
use crate::error::{check_dim, Error, Result};
use crate::estimators::{fit_logistic, fit_ridge, LinearModel};
use crate::polyfeat::PolyFeatureMap;

/// Polynomial `z ↦ Σ_α c_α z^α` over a full graded-lex basis. The intercept is
/// folded into the constant coefficient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialProbe {
    pub feature_map: PolyFeatureMap,
    pub coefficients: DVector<f64>,
    pub task: Task,
}

/// Degree-2 member of the family.
pub type QuadraticProbe = PolynomialProbe;

impl PolynomialProbe {
    pub fn new(feature_map: PolyFeatureMap, coefficients: DVector<f64>, task: Task) -> Result<Self> {
        check_dim(
            "polynomial coefficients vs basis",
            feature_map.len(),
            coefficients.len(),
        )?;
        Ok(Self {
            feature_map,
            coefficients,
            task,
        })
    }

    pub fn degree(&self) -> usize {
        self.feature_map.max_degree()
    }

    pub fn input_dim(&self) -> usize {
        self.feature_map.input_dim()
    }

    /// Raw polynomial values (logits for classifiers).
    pub fn score(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.feature_map.expand(x)? * &self.coefficients)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<bool>> {
        Ok(self.score(x)?.iter().map(|s| *s > 0.0).collect())
    }

    /// Re-expresses the probe in coordinates `z' = Az + t`, so that the
    /// result evaluated at `g(z)` equals this probe at `z`.
    pub fn transport(&self, g: &AffineTransform) -> Result<Self> {
        if self.degree() > 2 {
            return Err(Error::InvalidArgument(format!(
                "analytic transport is implemented for degree ≤ 2, got {}",
                self.degree()
            )));
        }
        check_dim("transport dimension", self.input_dim(), g.dim())?;
        let form = QuadraticForm::from_coefficients(&self.feature_map, &self.coefficients)?;
        let moved = form.transport(g);
        Ok(Self {
            feature_map: self.feature_map.clone(),
            coefficients: moved.to_coefficients(&self.feature_map)?,
            task: self.task,
        })
    }
}

/// `z ↦ zᵀQz + wᵀz + c` with symmetric `Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticForm {
    pub q: DMatrix<f64>,
    pub w: DVector<f64>,
    pub c: f64,
}

impl QuadraticForm {
    /// Reads a coefficient vector over a basis of degree ≤ 2.
    pub fn from_coefficients(map: &PolyFeatureMap, coef: &DVector<f64>) -> Result<Self> {
        check_dim("quadratic coefficients vs basis", map.len(), coef.len())?;
        if map.max_degree() > 2 {
            return Err(Error::InvalidArgument(
                "quadratic form needs a basis of degree ≤ 2".into(),
            ));
        }
        let n = map.input_dim();
        let mut form = Self {
            q: DMatrix::zeros(n, n),
            w: DVector::zeros(n),
            c: 0.0,
        };
        for (mono, value) in map.basis().iter().zip(coef.iter()) {
            let nz: Vec<(usize, u32)> = mono
                .exponents()
                .iter()
                .enumerate()
                .filter(|(_, e)| **e > 0)
                .map(|(j, e)| (j, *e))
                .collect();
            match nz.as_slice() {
                [] => form.c += value,
                [(j, 1)] => form.w[*j] += value,
                [(j, 2)] => form.q[(*j, *j)] += value,
                [(i, 1), (j, 1)] => {
                    form.q[(*i, *j)] += 0.5 * value;
                    form.q[(*j, *i)] += 0.5 * value;
                }
                _ => unreachable!("basis of degree ≤ 2"),
            }
        }
        Ok(form)
    }

    /// Writes the form back onto a basis of degree 2.
    pub fn to_coefficients(&self, map: &PolyFeatureMap) -> Result<DVector<f64>> {
        check_dim("quadratic form dimension", map.input_dim(), self.w.len())?;
        let mut out = DVector::zeros(map.len());
        for (k, mono) in map.basis().iter().enumerate() {
            let nz: Vec<(usize, u32)> = mono
                .exponents()
                .iter()
                .enumerate()
                .filter(|(_, e)| **e > 0)
                .map(|(j, e)| (j, *e))
                .collect();
            out[k] = match nz.as_slice() {
                [] => self.c,
                [(j, 1)] => self.w[*j],
                [(j, 2)] => self.q[(*j, *j)],
                [(i, 1), (j, 1)] => self.q[(*i, *j)] + self.q[(*j, *i)],
                _ => unreachable!("basis of degree ≤ 2"),
            };
        }
        if map.max_degree() < 2 && self.q.amax() > 0.0 {
            return Err(Error::InvalidArgument(
                "nonzero quadratic part on a linear basis".into(),
            ));
        }
        Ok(out)
    }

    pub fn eval_rows(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let xq = x * &self.q;
        let mut out = x * &self.w;
        for i in 0..x.nrows() {
            out[i] += xq.row(i).dot(&x.row(i)) + self.c;
        }
        out
    }

    /// `p'(z') = p(A⁻¹(z' − t))`: with `B = A⁻¹`, `u = −Bt`,
    /// `Q' = BᵀQB`, `w' = Bᵀ(2Qu + w)`, `c' = uᵀQu + wᵀu + c`.
    pub fn transport(&self, g: &AffineTransform) -> Self {
        let b = g.inverse_matrix();
        let u = -(b * g.shift());
        let qu = &self.q * &u;
        let bt = b.transpose();
        let mut q = &bt * &self.q * b;
        // Re-symmetrize against rounding.
        q = (&q + q.transpose()) * 0.5;
        Self {
            q,
            w: &bt * (&qu * 2.0 + &self.w),
            c: u.dot(&qu) + self.w.dot(&u) + self.c,
        }
    }
}

/// Affine transport of a linear scorer: `w' = A⁻ᵀw`, `b' = b − ⟨w', t⟩`.
pub fn transport_linear(m: &LinearModel, g: &AffineTransform) -> Result<LinearModel> {
    check_dim("transport dimension", m.dim(), g.dim())?;
    let w = g.inverse_matrix().transpose() * &m.weights;
    let b = m.effective_intercept() - w.dot(g.shift());
    Ok(LinearModel::new(w, b))
}

/// Fits a full polynomial probe of the given degree by delegating to Ridge or
/// logistic regression on the expanded features.
pub fn fit_polynomial(x: &DMatrix<f64>, target: Target<'_>, degree: usize, cfg: &FitConfig) -> Result<PolynomialProbe> {
    let map = PolyFeatureMap::new(x.ncols(), degree)?;
    let phi = map.expand(x)?;
    let (model, task) = match (target, cfg) {
        (Target::Regression(y), FitConfig::Ridge(c)) => (fit_ridge(&phi, y, c)?, Task::Regression),
        (Target::Classification(y), FitConfig::Logistic(c)) => (fit_logistic(&phi, y, c)?, Task::Classification),
        _ => {
            return Err(Error::InvalidArgument(
                "regression targets need a Ridge config, classification targets a logistic config".into(),
            ))
        }
    };
    let mut coefficients = model.weights.clone();
    coefficients[0] += model.effective_intercept();
    PolynomialProbe::new(map, coefficients, task)
}

pub fn fit_quadratic(x: &DMatrix<f64>, target: Target<'_>, cfg: &FitConfig) -> Result<QuadraticProbe> {
    fit_polynomial(x, target, 2, cfg)
}
