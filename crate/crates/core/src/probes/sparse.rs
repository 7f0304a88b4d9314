//! Quadratic probes restricted to a fixed set of monomials.
//!
//! The support is chosen in the coordinates the probe was trained in, so it
//! does not survive a change of basis: [`evaluate_frozen_sparse`] reuses the
//! same monomial slots in new coordinates without rewriting coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::affine::AffineTransform;
use crate::error::{check_dim, Error, Result};
use crate::estimators::{fit_ridge, RidgeConfig};
use crate::polyfeat::{MultiIndex, PolyFeatureMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum SelectionRule {
    /// Top `k` monomials by absolute centered Pearson correlation with the
    /// target, ties broken by basis order.
    TopKPearson { k: usize },
    /// All linear terms and squares.
    Diagonal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseQuadraticProbe {
    pub input_dim: usize,
    pub support: Vec<MultiIndex>,
    pub coefficients: DVector<f64>,
    pub intercept: f64,
    pub selection_rule: SelectionRule,
}

impl SparseQuadraticProbe {
    fn design(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("sparse probe input columns", self.input_dim, x.ncols())?;
        Ok(support_columns(&self.support, x))
    }

    pub fn score(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let mut s = self.design(x)? * &self.coefficients;
        s.add_scalar_mut(self.intercept);
        Ok(s)
    }
}

fn support_columns(support: &[MultiIndex], x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), support.len());
    for (k, mono) in support.iter().enumerate() {
        for i in 0..x.nrows() {
            let mut v = 1.0;
            for (j, e) in mono.exponents().iter().enumerate() {
                if *e > 0 {
                    v *= x[(i, j)].powi(*e as i32);
                }
            }
            out[(i, k)] = v;
        }
    }
    out
}

/// Absolute centered Pearson correlation of every column with `y`; columns
/// with zero variance score 0.
fn abs_correlations(phi: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    let n = y.len() as f64;
    let ym = y.iter().sum::<f64>() / n;
    let yc: DVector<f64> = DVector::from_iterator(y.len(), y.iter().map(|v| v - ym));
    let syy = yc.norm_squared();
    if syy <= 1e-28 * n * ym.abs().max(1.0).powi(2) {
        return Err(Error::ZeroVariance("sparse selection target"));
    }
    Ok(phi
        .column_iter()
        .map(|col| {
            let m = col.sum() / n;
            let mut sxy = 0.0;
            let mut sxx = 0.0;
            for (v, t) in col.iter().zip(yc.iter()) {
                sxy += (v - m) * t;
                sxx += (v - m) * (v - m);
            }
            if sxx <= 1e-28 * n * m.abs().max(1.0).powi(2) {
                0.0
            } else {
                (sxy / (sxx.sqrt() * syy.sqrt())).abs()
            }
        })
        .collect())
}

fn fit_on_support(
    x: &DMatrix<f64>,
    y: &[f64],
    support: Vec<MultiIndex>,
    rule: SelectionRule,
    cfg: &RidgeConfig,
) -> Result<SparseQuadraticProbe> {
    let design = support_columns(&support, x);
    let model = fit_ridge(&design, y, cfg)?;
    Ok(SparseQuadraticProbe {
        input_dim: x.ncols(),
        support,
        intercept: model.effective_intercept(),
        coefficients: model.weights,
        selection_rule: rule,
    })
}

/// Selects the `k` degree-≤2 monomials most correlated with `y` and fits
/// Ridge on them.
pub fn fit_sparse_quadratic(x: &DMatrix<f64>, y: &[f64], k: usize, cfg: &RidgeConfig) -> Result<SparseQuadraticProbe> {
    check_dim("sparse probe targets vs rows", x.nrows(), y.len())?;
    let map = PolyFeatureMap::new(x.ncols(), 2)?;
    if k == 0 || k > map.len() {
        return Err(Error::InvalidArgument(format!(
            "support size {k} must be in 1..={}",
            map.len()
        )));
    }
    let phi = map.expand(x)?;
    let corr = abs_correlations(&phi, y)?;
    let mut order: Vec<usize> = (0..map.len()).collect();
    // Stable sort keeps graded-lex order among ties.
    order.sort_by(|a, b| corr[*b].total_cmp(&corr[*a]));
    let mut chosen: Vec<usize> = order[..k].to_vec();
    chosen.sort_unstable();
    let support = chosen.iter().map(|&i| map.basis()[i].clone()).collect();
    fit_on_support(x, y, support, SelectionRule::TopKPearson { k }, cfg)
}

/// Diagonal quadratic: linear terms plus squares, `2n` monomials.
pub fn fit_diagonal_quadratic(x: &DMatrix<f64>, y: &[f64], cfg: &RidgeConfig) -> Result<SparseQuadraticProbe> {
    check_dim("sparse probe targets vs rows", x.nrows(), y.len())?;
    let n = x.ncols();
    let mut support = Vec::with_capacity(2 * n);
    for p in 1..=2u32 {
        for j in 0..n {
            let mut e = vec![0; n];
            e[j] = p;
            support.push(MultiIndex(e));
        }
    }
    fit_on_support(x, y, support, SelectionRule::Diagonal, cfg)
}

/// Scores the probe's frozen monomial slots directly on transformed
/// coordinates `x_transformed`, without any coefficient rewrite.
pub fn evaluate_frozen_sparse(
    p: &SparseQuadraticProbe,
    g: &AffineTransform,
    x_transformed: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    check_dim("frozen evaluation transform dimension", p.input_dim, g.dim())?;
    p.score(x_transformed)
}
