//! Bounded-degree monomial bases and polynomial feature expansion.
//!
//! The basis of all monomials `x^α` with `|α| ≤ ℓ` in `n` variables is kept in
//! graded lexicographic order: ascending total degree, and within a degree the
//! exponent vectors in descending lexicographic order of `(α_1, …, α_n)`, so
//! for `n = 2, ℓ = 2` the order is `1, x1, x2, x1², x1x2, x2²`. The degree-ℓ
//! basis is therefore a prefix of the degree-(ℓ+1) basis.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Largest number of monomials `expand` will materialize.
pub const MAX_BASIS_LEN: usize = 5_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn zero(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    /// Evaluates `x^α`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .filter(|(e, _)| **e > 0)
            .map(|(e, v)| v.powi(*e as i32))
            .product()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (j, e) in self.0.iter().enumerate() {
            if *e == 0 {
                continue;
            }
            if !first {
                f.write_str("*")?;
            }
            first = false;
            write!(f, "x{}", j + 1)?;
            if *e > 1 {
                write!(f, "^{e}")?;
            }
        }
        if first {
            f.write_str("1")?;
        }
        Ok(())
    }
}

/// Number of monomials of degree ≤ `degree` in `n` variables, `C(n+ℓ, ℓ)`.
/// Saturates at `usize::MAX`.
pub fn basis_len(n: usize, degree: usize) -> usize {
    let mut acc: u128 = 1;
    for i in 1..=degree as u128 {
        acc = acc * (n as u128 + i) / i;
        if acc > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    acc as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyFeatureMap {
    input_dim: usize,
    max_degree: usize,
    basis: Vec<MultiIndex>,
    /// For each basis entry past the constant: (index of `α - e_j`, j) where
    /// `j` is the first variable with a nonzero exponent.
    #[serde(skip)]
    parents: Vec<(usize, usize)>,
}

impl PolyFeatureMap {
    /// Enumerates the graded-lex monomial basis.
    pub fn new(n: usize, max_degree: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("input dimension must be positive".into()));
        }
        let len = basis_len(n, max_degree);
        if len > MAX_BASIS_LEN {
            return Err(Error::SizeGuard {
                what: "monomial basis",
                size: len,
                limit: MAX_BASIS_LEN,
            });
        }
        let mut basis = Vec::with_capacity(len);
        let mut current = vec![0u32; n];
        for d in 0..=max_degree {
            push_degree(&mut basis, &mut current, 0, d as u32);
        }
        let mut map = Self {
            input_dim: n,
            max_degree,
            basis,
            parents: Vec::new(),
        };
        map.rebuild_parents();
        Ok(map)
    }

    fn rebuild_parents(&mut self) {
        let index: std::collections::HashMap<&MultiIndex, usize> =
            self.basis.iter().enumerate().map(|(i, m)| (m, i)).collect();
        self.parents = self
            .basis
            .iter()
            .skip(1)
            .map(|m| {
                let j = m.0.iter().position(|e| *e > 0).expect("non-constant monomial");
                let mut parent = m.clone();
                parent.0[j] -= 1;
                (index[&parent], j)
            })
            .collect();
    }

    /// Restores derived lookup tables after deserialization.
    pub fn restore(mut self) -> Self {
        self.rebuild_parents();
        self
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn basis(&self) -> &[MultiIndex] {
        &self.basis
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn position(&self, m: &MultiIndex) -> Option<usize> {
        self.basis.iter().position(|b| b == m)
    }

    /// Column range of the monomials of exactly degree `d`.
    pub fn degree_range(&self, d: usize) -> std::ops::Range<usize> {
        let start = if d == 0 { 0 } else { basis_len(self.input_dim, d - 1) };
        start..basis_len(self.input_dim, d).min(self.basis.len())
    }

    /// Evaluates every monomial on every row of `x`; column 0 is all ones.
    pub fn expand(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("polynomial expansion input columns", self.input_dim, x.ncols())?;
        let rows = x.nrows();
        let mut out = DMatrix::zeros(rows, self.basis.len());
        out.column_mut(0).fill(1.0);
        if self.parents.len() + 1 != self.basis.len() {
            // Deserialized without `restore`.
            return self.clone().restore().expand(x);
        }
        for (k, &(parent, j)) in self.parents.iter().enumerate() {
            let col = k + 1;
            // Columns are contiguous in column-major storage.
            let (head, mut tail) = out.columns_range_pair_mut(..col, col..col + 1);
            let src = head.column(parent);
            let var = x.column(j);
            for i in 0..rows {
                tail[(i, 0)] = src[i] * var[i];
            }
        }
        Ok(out)
    }

    /// Expands a single point.
    pub fn expand_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("polynomial expansion input length", self.input_dim, x.len())?;
        let mut out = vec![0.0; self.basis.len()];
        out[0] = 1.0;
        for (k, &(parent, j)) in self.parents.iter().enumerate() {
            out[k + 1] = out[parent] * x[j];
        }
        Ok(out)
    }
}

fn push_degree(out: &mut Vec<MultiIndex>, current: &mut [u32], pos: usize, remaining: u32) {
    let n = current.len();
    if pos == n - 1 {
        current[pos] = remaining;
        out.push(MultiIndex(current.to_vec()));
        current[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        push_degree(out, current, pos + 1, remaining - e);
    }
    current[pos] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exps(map: &PolyFeatureMap) -> Vec<Vec<u32>> {
        map.basis().iter().map(|m| m.0.clone()).collect()
    }

    #[test]
    fn wide_quadratic_basis_size() {
        assert_eq!(PolyFeatureMap::new(64, 2).unwrap().len(), 2145);
    }

    #[test]
    fn constant_only_basis() {
        let m = PolyFeatureMap::new(3, 0).unwrap();
        assert_eq!(exps(&m), vec![vec![0, 0, 0]]);
    }

    #[test]
    fn bivariate_cubic_has_ten_terms() {
        // Hand enumeration of (a, b) with a + b ≤ 3.
        let mut hand = Vec::new();
        for d in 0..=3u32 {
            for a in (0..=d).rev() {
                hand.push(vec![a, d - a]);
            }
        }
        let m = PolyFeatureMap::new(2, 3).unwrap();
        assert_eq!(m.len(), 10);
        assert_eq!(exps(&m), hand);
    }

    #[test]
    fn rejects_zero_dimension() {
        assert!(PolyFeatureMap::new(0, 2).is_err());
    }

    #[test]
    fn dimension_guard() {
        let err = PolyFeatureMap::new(4096, 2).unwrap_err();
        assert!(matches!(err, Error::SizeGuard { .. }));
    }

    #[test]
    fn expand_examples() {
        let m = PolyFeatureMap::new(1, 2).unwrap();
        let out = m.expand(&DMatrix::from_row_slice(1, 1, &[3.0])).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 3.0, 9.0]);

        let m = PolyFeatureMap::new(2, 2).unwrap();
        let out = m.expand(&DMatrix::from_row_slice(1, 2, &[1.0, 2.0])).unwrap();
        assert_eq!(
            out.row(0).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 1.0, 2.0, 1.0, 2.0, 4.0]
        );

        let m = PolyFeatureMap::new(2, 1).unwrap();
        let out = m.expand(&DMatrix::zeros(1, 2)).unwrap();
        assert_eq!(out.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn expand_rejects_wrong_width() {
        let m = PolyFeatureMap::new(3, 2).unwrap();
        assert!(m.expand(&DMatrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn expand_matches_direct_monomial_evaluation() {
        let m = PolyFeatureMap::new(3, 4).unwrap();
        let x = DMatrix::from_row_slice(2, 3, &[0.5, -1.5, 2.0, 1.1, 0.3, -0.7]);
        let out = m.expand(&x).unwrap();
        for i in 0..2 {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            for (j, mono) in m.basis().iter().enumerate() {
                let direct = mono.eval(&row);
                assert!((out[(i, j)] - direct).abs() <= 1e-12 * direct.abs().max(1.0));
            }
            assert_eq!(
                m.expand_row(&row).unwrap(),
                out.row(i).iter().copied().collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn serde_roundtrip_restores_parents() {
        let m = PolyFeatureMap::new(2, 2).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: PolyFeatureMap = serde_json::from_str(&json).unwrap();
        let back = back.restore();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn basis_len_matches_binomial(n in 1usize..=8, l in 0usize..=8) {
            let m = PolyFeatureMap::new(n, l).unwrap();
            prop_assert_eq!(m.len(), basis_len(n, l));
            let x = DMatrix::from_element(1, n, 0.3);
            prop_assert_eq!(m.expand(&x).unwrap().ncols(), basis_len(n, l));
            let mut seen = std::collections::HashSet::new();
            for mono in m.basis() {
                prop_assert!(mono.degree() as usize <= l);
                prop_assert!(seen.insert(mono.clone()));
            }
        }

        #[test]
        fn nesting(n in 1usize..=6, l in 0usize..=5) {
            let small = PolyFeatureMap::new(n, l).unwrap();
            let big = PolyFeatureMap::new(n, l + 1).unwrap();
            prop_assert_eq!(&big.basis()[..small.len()], small.basis());
        }

        #[test]
        fn homogeneity(x in proptest::collection::vec(-2.0f64..2.0, 3), t in 0.2f64..3.0) {
            let m = PolyFeatureMap::new(3, 4).unwrap();
            let base = m.expand_row(&x).unwrap();
            let scaled: Vec<f64> = x.iter().map(|v| v * t).collect();
            let out = m.expand_row(&scaled).unwrap();
            for (j, mono) in m.basis().iter().enumerate() {
                let expect = base[j] * t.powi(mono.degree() as i32);
                prop_assert!((out[j] - expect).abs() <= 1e-12 * expect.abs().max(1e-300) + 1e-300);
            }
        }
    }
}
