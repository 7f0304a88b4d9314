//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Rows are samples, columns are features.
pub type DataMatrix = DMatrix<f64>;

const CHOLESKY_BLOCK: usize = 96;

/// `xᵀx`, routed through the gemm kernel.
pub fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    let xt = x.transpose();
    &xt * x
}

/// In-place blocked lower Cholesky factorization. On success the lower
/// triangle of `a` holds `L` with `a = L Lᵀ`; the strict upper triangle is zeroed.
pub fn cholesky_in_place(a: &mut DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::InvalidArgument("cholesky of a non-square matrix".into()));
    }
    let mut k0 = 0;
    while k0 < n {
        let kb = CHOLESKY_BLOCK.min(n - k0);
        // Unblocked factorization of the diagonal block.
        for j in k0..k0 + kb {
            let mut d = a[(j, j)];
            for p in k0..j {
                d -= a[(j, p)] * a[(j, p)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite);
            }
            let d = d.sqrt();
            a[(j, j)] = d;
            for i in j + 1..k0 + kb {
                let mut s = a[(i, j)];
                for p in k0..j {
                    s -= a[(i, p)] * a[(j, p)];
                }
                a[(i, j)] = s / d;
            }
        }
        let rest = n - k0 - kb;
        if rest > 0 {
            // Panel: A21 <- A21 L11^{-T}, computed row by row as a forward solve.
            let l11 = a.view((k0, k0), (kb, kb)).clone_owned();
            let mut panel = a.view((k0 + kb, k0), (rest, kb)).clone_owned();
            for r in 0..rest {
                for j in 0..kb {
                    let mut s = panel[(r, j)];
                    for p in 0..j {
                        s -= panel[(r, p)] * l11[(j, p)];
                    }
                    panel[(r, j)] = s / l11[(j, j)];
                }
            }
            a.view_mut((k0 + kb, k0), (rest, kb)).copy_from(&panel);
            // Trailing update of the lower triangle, one block column at a time.
            let mut j0 = 0;
            while j0 < rest {
                let jb = CHOLESKY_BLOCK.min(rest - j0);
                let lhs = panel.view((j0, 0), (rest - j0, kb));
                let rhs = panel.view((j0, 0), (jb, kb)).transpose();
                let mut target = a.view_mut((k0 + kb + j0, k0 + kb + j0), (rest - j0, jb));
                target.gemm(-1.0, &lhs, &rhs, 1.0);
                j0 += jb;
            }
        }
        k0 += kb;
    }
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    Ok(())
}

/// Solves `L Lᵀ x = b` for every column of `b`, given the factor from [`cholesky_in_place`].
pub fn cholesky_solve(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    for c in 0..b.ncols() {
        let mut col = b.column_mut(c);
        for i in 0..n {
            let mut s = col[i];
            for p in 0..i {
                s -= l[(i, p)] * col[p];
            }
            col[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = col[i];
            for p in i + 1..n {
                s -= l[(p, i)] * col[p];
            }
            col[i] = s / l[(i, i)];
        }
    }
}

/// Solves a symmetric positive (semi)definite system. Falls back to an
/// eigendecomposition pseudo-solve when the Cholesky factorization breaks down.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut l = a.clone();
    if cholesky_in_place(&mut l).is_ok() {
        let mut x = b.clone();
        cholesky_solve(&l, &mut x);
        if x.iter().all(|v| v.is_finite()) {
            return x;
        }
    }
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = max * 1e-13 * a.nrows() as f64;
    let qtb = eig.eigenvectors.transpose() * b;
    let mut scaled = qtb;
    for (i, lambda) in eig.eigenvalues.iter().enumerate() {
        let inv = if *lambda > cutoff { 1.0 / lambda } else { 0.0 };
        scaled.row_mut(i).scale_mut(inv);
    }
    &eig.eigenvectors * scaled
}

/// Singular value decomposition with singular values in descending order.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    /// Right singular vectors as columns.
    pub v: DMatrix<f64>,
}

/// Thin SVD. Computed with faer: nalgebra's bidiagonal SVD loses accuracy
/// on exactly rank-deficient inputs (e.g. a bank with a duplicated row).
pub fn svd(m: &DMatrix<f64>) -> SortedSvd {
    let (rows, cols) = m.shape();
    let r = rows.min(cols);
    if r == 0 {
        return SortedSvd {
            u: DMatrix::zeros(rows, 0),
            singular_values: DVector::zeros(0),
            v: DMatrix::zeros(cols, 0),
        };
    }
    let a = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let s = a.thin_svd().expect("SVD of a finite matrix converges");
    let (u, sv, v) = (s.U(), s.S().column_vector(), s.V());
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|x, y| sv[*y].total_cmp(&sv[*x]));
    SortedSvd {
        u: DMatrix::from_fn(rows, r, |i, j| u[(i, order[j])]),
        singular_values: DVector::from_iterator(r, order.iter().map(|&k| sv[k])),
        v: DMatrix::from_fn(cols, r, |i, j| v[(i, order[j])]),
    }
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    svd(m).singular_values
}

pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    singular_values(m).max()
}

pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = singular_values(m);
    let min = s.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        s.max() / min
    }
}

/// Moore-Penrose pseudo-inverse with relative cutoff `rel_cutoff · σ_max`.
pub fn pinv(m: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let s = svd(m);
    let cutoff = s.singular_values.max() * rel_cutoff;
    let mut v_scaled = s.v.clone();
    for (j, sigma) in s.singular_values.iter().enumerate() {
        let inv = if *sigma > cutoff { 1.0 / sigma } else { 0.0 };
        v_scaled.column_mut(j).scale_mut(inv);
    }
    v_scaled * s.u.transpose()
}

pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Subtracts `mean` from every row.
pub fn center_rows(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    out
}

/// Selects rows by index.
pub fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

pub fn select<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}
