//! Invertible affine reparameterizations `z ↦ Az + t` of a hidden space.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::{linalg, rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    a: DMatrix<f64>,
    t: DVector<f64>,
    a_inv: DMatrix<f64>,
}

impl AffineTransform {
    pub fn new(a: DMatrix<f64>, t: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::InvalidArgument("affine matrix must be square".into()));
        }
        check_dim("affine translation length", n, t.len())?;
        let a_inv = a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::RankDeficient("affine matrix is singular".into()))?;
        let err = (&a * &a_inv - DMatrix::<f64>::identity(n, n)).amax();
        if !(err <= 1e-10) {
            return Err(Error::RankDeficient(format!(
                "affine matrix is numerically singular (|A A^-1 - I| = {err:e})"
            )));
        }
        Ok(Self { a, t, a_inv })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            a: DMatrix::identity(n, n),
            t: DVector::zeros(n),
            a_inv: DMatrix::identity(n, n),
        }
    }

    pub fn translation(t: DVector<f64>) -> Self {
        let n = t.len();
        Self {
            a: DMatrix::identity(n, n),
            t,
            a_inv: DMatrix::identity(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.t.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn shift(&self) -> &DVector<f64> {
        &self.t
    }

    pub fn inverse_matrix(&self) -> &DMatrix<f64> {
        &self.a_inv
    }

    pub fn condition_number(&self) -> f64 {
        linalg::condition_number(&self.a)
    }

    /// Maps every row `z` of `x` to `Az + t`.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("affine transform input columns", self.dim(), x.ncols())?;
        let mut out = x * self.a.transpose();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.t[j]);
        }
        Ok(out)
    }

    /// Maps every row `z'` back to `A⁻¹(z' − t)`.
    pub fn apply_inverse(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.inverse().apply(x)
    }

    pub fn inverse(&self) -> Self {
        Self {
            a: self.a_inv.clone(),
            t: -(&self.a_inv * &self.t),
            a_inv: self.a.clone(),
        }
    }

    /// `self ∘ inner`: first `inner`, then `self`.
    pub fn compose(&self, inner: &Self) -> Result<Self> {
        check_dim("composed transform dimension", self.dim(), inner.dim())?;
        Ok(Self {
            a: &self.a * &inner.a,
            t: &self.a * &inner.t + &self.t,
            a_inv: &inner.a_inv * &self.a_inv,
        })
    }
}

/// PCA whitening `z ↦ Λ^{-1/2} Vᵀ (z − μ)` of the rows of `x`, with
/// eigenvalues floored at `rel_floor · λ_max`.
pub fn whitening(x: &DMatrix<f64>, rel_floor: f64) -> Result<AffineTransform> {
    let (rows, n) = x.shape();
    if rows < 2 || n == 0 {
        return Err(Error::Empty("whitening needs at least two rows"));
    }
    let mean = linalg::column_means(x);
    let xc = linalg::center_rows(x, &mean);
    let cov = linalg::gram(&xc) / (rows - 1) as f64;
    let eig = cov.symmetric_eigen();
    let top = eig.eigenvalues.max();
    if !(top > 0.0) {
        return Err(Error::ZeroVariance("whitening input"));
    }
    let floor = top * rel_floor.max(f64::EPSILON);
    let mut a = eig.eigenvectors.transpose();
    for (i, mut row) in a.row_iter_mut().enumerate() {
        row /= eig.eigenvalues[i].max(floor).sqrt();
    }
    let t = -(&a * mean);
    AffineTransform::new(a, t)
}

/// Random invertible transform with `cond(A) ≤ cond_max`.
///
/// `A = U diag(σ) Vᵀ` with Haar-orthogonal `U`, `V` and `log σ_i` uniform on
/// `[−½ log κ, ½ log κ]`, so every singular-value ratio is at most `κ`;
/// `t ~ N(0, I)`.
pub fn sample_affine(n: usize, cond_max: f64, seed: u64) -> Result<AffineTransform> {
    if n == 0 {
        return Err(Error::InvalidArgument("transform dimension must be positive".into()));
    }
    if !(cond_max >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "cond_max {cond_max} must be at least 1"
        )));
    }
    let mut g = rng::stream(seed, 0xaff1);
    let u = rng::orthogonal(&mut g, n);
    let v = rng::orthogonal(&mut g, n);
    let half = 0.5 * cond_max.ln();
    let sigma: Vec<f64> = (0..n)
        .map(|_| {
            let s: f64 = rand::Rng::random_range(&mut g, -half..=half);
            s.exp()
        })
        .collect();
    let t = rng::normal_vector(&mut g, n);
    let mut us = u.clone();
    let mut us_inv = v.clone();
    for (j, s) in sigma.iter().enumerate() {
        us.column_mut(j).scale_mut(*s);
        us_inv.column_mut(j).scale_mut(1.0 / s);
    }
    let a = &us * v.transpose();
    let a_inv = &us_inv * u.transpose();
    Ok(AffineTransform { a, t, a_inv })
}
