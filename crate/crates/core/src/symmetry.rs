//! Numerical checks of readout-equivalence identities: softmax heads under
//! linear reparameterization with a common logit shift, pseudo-inverse
//! alignment of two realizations, and affine heads via homogenization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// Readout rows `λ_iᵀ` (`n_classes × d`) and hidden states `γ(x)` as rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutRealization {
    pub lambda: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

impl ReadoutRealization {
    pub fn new(lambda: DMatrix<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        check_dim("readout width vs hidden dimension", lambda.ncols(), gamma.ncols())?;
        Ok(Self { lambda, gamma })
    }

    pub fn dim(&self) -> usize {
        self.lambda.ncols()
    }

    /// Logits, one row per sample.
    pub fn logits(&self) -> DMatrix<f64> {
        &self.gamma * self.lambda.transpose()
    }
}

const RANK_TOL: f64 = 1e-12;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

fn square_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::InvalidArgument("reparameterization must be square".into()));
    }
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("reparameterization is singular".into()))
}

/// Builds `γ_* = A⁻ᵀγ`, `Λ_* = ΛAᵀ + 1cᵀ` and returns the largest absolute
/// difference between the two softmax outputs over all samples and classes.
pub fn softmax_equivalence_check(r: &ReadoutRealization, a: &DMatrix<f64>, c: &DVector<f64>) -> Result<f64> {
    let d = r.dim();
    check_dim("reparameterization size", d, a.nrows())?;
    check_dim("shift length", d, c.len())?;
    let a_inv = square_inverse(a)?;
    let gamma_star = &r.gamma * &a_inv;
    let mut lambda_star = &r.lambda * a.transpose();
    for mut row in lambda_star.row_iter_mut() {
        row += c.transpose();
    }
    let p = softmax_rows(&r.logits());
    let q = softmax_rows(&(gamma_star * lambda_star.transpose()));
    Ok((p - q).amax())
}

/// Tolerance for rows of a recovered shift to agree.
pub const SHIFT_TOL: f64 = 1e-10;

/// Recovers `c` from `Λ_* = ΛAᵀ + 1cᵀ` as `λ*_1 − Aλ_1`, verifying that every
/// row yields the same vector.
pub fn recover_common_shift(
    lambda: &DMatrix<f64>,
    lambda_star: &DMatrix<f64>,
    a: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    check_dim("readout rows", lambda.nrows(), lambda_star.nrows())?;
    check_dim("readout width", lambda.ncols(), lambda_star.ncols())?;
    check_dim("reparameterization size", lambda.ncols(), a.nrows())?;
    if lambda.nrows() == 0 {
        return Err(Error::Empty("readout rows"));
    }
    let predicted = lambda * a.transpose();
    let diff = lambda_star - predicted;
    let c: DVector<f64> = diff.row(0).transpose();
    let scale = lambda_star.amax().max(1.0);
    for i in 1..diff.nrows() {
        let disc = (diff.row(i).transpose() - &c).amax();
        if disc > SHIFT_TOL * scale {
            return Err(Error::NotEquivalent {
                row: i,
                discrepancy: disc,
            });
        }
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustAlignment {
    /// `d × d` map with `γ2 ≈ Aγ1`.
    pub a: DMatrix<f64>,
    pub mean_hidden_error: f64,
    /// `ε² / σ_d(Λ2)²` with `ε²` the measured mean output discrepancy.
    pub bound: f64,
    pub output_discrepancy: f64,
    pub sigma_min: f64,
}

impl RobustAlignment {
    pub fn holds(&self, slack: f64) -> bool {
        self.mean_hidden_error <= self.bound + slack * self.bound.max(1.0)
    }
}

/// Aligns two realizations with `A = Λ2⁺Λ1` and measures the hidden-state
/// error against the output-discrepancy bound.
pub fn robust_align(
    lambda1: &DMatrix<f64>,
    lambda2: &DMatrix<f64>,
    gamma1: &DMatrix<f64>,
    gamma2: &DMatrix<f64>,
) -> Result<RobustAlignment> {
    check_dim("readout rows", lambda1.nrows(), lambda2.nrows())?;
    check_dim("first readout width vs hidden", lambda1.ncols(), gamma1.ncols())?;
    check_dim("second readout width vs hidden", lambda2.ncols(), gamma2.ncols())?;
    check_dim("paired samples", gamma1.nrows(), gamma2.nrows())?;
    if gamma1.nrows() == 0 {
        return Err(Error::Empty("alignment samples"));
    }
    let d2 = lambda2.ncols();
    if lambda2.nrows() < d2 {
        return Err(Error::RankDeficient(
            "second readout has fewer rows than columns".into(),
        ));
    }
    let s = linalg::singular_values(lambda2);
    let sigma_max = s.max();
    let sigma_min = s.min();
    if !(sigma_min > RANK_TOL * sigma_max) {
        return Err(Error::RankDeficient(format!(
            "second readout σ_min = {sigma_min:e} relative to σ_max = {sigma_max:e}"
        )));
    }
    let a = linalg::pinv(lambda2, RANK_TOL) * lambda1;
    let n = gamma1.nrows() as f64;
    let out_diff = gamma2 * lambda2.transpose() - gamma1 * lambda1.transpose();
    let eps2 = out_diff.norm_squared() / n;
    let hidden = gamma2 - gamma1 * a.transpose();
    let mean_hidden_error = hidden.norm_squared() / n;
    Ok(RobustAlignment {
        a,
        mean_hidden_error,
        bound: eps2 / (sigma_min * sigma_min),
        output_discrepancy: eps2,
        sigma_min,
    })
}

/// Affine readout `ℓ_i(h) = ⟨λ_i, h⟩ + β_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineHead {
    pub lambda: DMatrix<f64>,
    pub beta: DVector<f64>,
}

/// Applies `h ↦ A⁻ᵀh + b` with `λ*_i = Aλ_i` and `β*_i = β_i − ⟨Aλ_i, b⟩`,
/// and independently through the homogenized `(d+1)`-dimensional linear
/// realization on the chart `h̃_{d+1} = 1`. Returns the largest absolute
/// logit discrepancy of either route against the original head.
pub fn homogenized_affine_check(
    head: &AffineHead,
    gamma: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<f64> {
    let d = head.lambda.ncols();
    check_dim("head bias length", head.lambda.nrows(), head.beta.len())?;
    check_dim("hidden dimension", d, gamma.ncols())?;
    check_dim("reparameterization size", d, a.nrows())?;
    check_dim("translation length", d, b.len())?;
    let a_inv = square_inverse(a)?;
    let add_bias = |mut m: DMatrix<f64>, beta: &DVector<f64>| {
        for mut row in m.row_iter_mut() {
            row += beta.transpose();
        }
        m
    };
    let original = add_bias(gamma * head.lambda.transpose(), &head.beta);

    // Direct route.
    let mut gamma_star = gamma * &a_inv;
    for mut row in gamma_star.row_iter_mut() {
        row += b.transpose();
    }
    let lambda_star = &head.lambda * a.transpose();
    let beta_star = &head.beta - &lambda_star * b;
    let direct = add_bias(&gamma_star * lambda_star.transpose(), &beta_star);

    // Homogenized route: h̃ = [h; 1], M̃ = [[A⁻ᵀ, b], [0, 1]], λ̃* = M̃⁻ᵀλ̃.
    let mut m = DMatrix::zeros(d + 1, d + 1);
    m.view_mut((0, 0), (d, d)).copy_from(&a_inv.transpose());
    m.view_mut((0, d), (d, 1)).copy_from(b);
    m[(d, d)] = 1.0;
    let m_inv_t = square_inverse(&m)?.transpose();
    let mut lam_aug = DMatrix::zeros(head.lambda.nrows(), d + 1);
    lam_aug
        .view_mut((0, 0), (head.lambda.nrows(), d))
        .copy_from(&head.lambda);
    lam_aug.set_column(d, &head.beta);
    let lam_aug_star = &lam_aug * m_inv_t.transpose();
    let mut h_aug = DMatrix::from_element(gamma.nrows(), d + 1, 1.0);
    h_aug.view_mut((0, 0), (gamma.nrows(), d)).copy_from(gamma);
    let h_aug_star = &h_aug * m.transpose();
    let homog = h_aug_star * lam_aug_star.transpose();

    Ok((&direct - &original).amax().max((&homog - &original).amax()))
}
