//! Kernel Ridge regression with the inhomogeneous polynomial kernel
//! `k(z, z') = (⟨z, z'⟩ + 1)^p`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg;

/// Largest training set the dense Gram matrix is built for.
pub const MAX_KERNEL_ROWS: usize = 20_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelPolyModel {
    pub degree: u32,
    pub alpha: f64,
    pub support: DMatrix<f64>,
    pub dual_coef: DVector<f64>,
    pub intercept: f64,
}

fn kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, degree: u32) -> DMatrix<f64> {
    let bt = b.transpose();
    let mut k = a * bt;
    k.apply(|v| *v = (*v + 1.0).powi(degree as i32));
    k
}

impl KernelPolyModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_dim("kernel model input columns", self.support.ncols(), x.ncols())?;
        let mut out = kernel(x, &self.support, self.degree) * &self.dual_coef;
        out.add_scalar_mut(self.intercept);
        Ok(out)
    }
}

/// Solves `(K + αI) c = y − ȳ`; predictions are `k(x, X) c + ȳ`.
pub fn fit_kernel_poly(x: &DMatrix<f64>, y: &[f64], degree: u32, alpha: f64) -> Result<KernelPolyModel> {
    let n = x.nrows();
    check_dim("kernel targets vs rows", n, y.len())?;
    if n == 0 {
        return Err(Error::Empty("kernel design matrix"));
    }
    if n > MAX_KERNEL_ROWS {
        return Err(Error::SizeGuard {
            what: "kernel Gram matrix rows",
            size: n,
            limit: MAX_KERNEL_ROWS,
        });
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "kernel ridge alpha {alpha} must be positive"
        )));
    }
    check_finite("kernel design matrix", x.iter())?;
    check_finite("kernel targets", y.iter())?;
    let mean = y.iter().sum::<f64>() / n as f64;
    let mut gram = kernel(x, x, degree);
    for i in 0..n {
        gram[(i, i)] += alpha;
    }
    let mut rhs = DMatrix::from_iterator(n, 1, y.iter().map(|v| v - mean));
    let mut l = gram;
    if linalg::cholesky_in_place(&mut l).is_err() {
        return Err(Error::NotPositiveDefinite);
    }
    linalg::cholesky_solve(&l, &mut rhs);
    Ok(KernelPolyModel {
        degree,
        alpha,
        support: x.clone(),
        dual_coef: rhs.column(0).into_owned(),
        intercept: mean,
    })
}
