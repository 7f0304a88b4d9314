//! Seeded random streams.
//!
//! Every generator in the crate draws from ChaCha20 (a counter-based stream
//! cipher with a 64-bit block counter). A `(seed, stream)` pair selects an
//! independent keystream, so sub-computations such as optimizer restarts or
//! per-transform draws can be reproduced in isolation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub type Prng = ChaCha20Rng;

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn stream(seed: u64, stream: u64) -> Prng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a label into a seed so that named sub-experiments get distinct streams.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, folded with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| normal(rng))
}

/// Matrix with iid standard normal entries, filled in row-major order.
pub fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = normal(rng);
        }
    }
    m
}

pub fn unit_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    loop {
        let v = normal_vector(rng, n);
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign fix).
pub fn orthogonal(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let g = normal_matrix(rng, n, n);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Fisher-Yates shuffle of `0..n`.
pub fn permutation(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
