//! Seeded synthetic datasets.
//!
//! Every generator is a pure function of its parameters and seed; all draws
//! come from [`crate::rng::stream`], one named stream per random component.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::{linalg, rng};

/// Largest accepted condition number for random embeddings.
pub const EMBED_COND_MAX: f64 = 50.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "values")]
pub enum Labels {
    Real(Vec<f64>),
    Binary(Vec<bool>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Real(v) => v.len(),
            Labels::Binary(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_real(&self) -> Option<&[f64]> {
        match self {
            Labels::Real(v) => Some(v),
            Labels::Binary(_) => None,
        }
    }

    pub fn as_binary(&self) -> Option<&[bool]> {
        match self {
            Labels::Binary(v) => Some(v),
            Labels::Real(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub generator: String,
    pub seed: u64,
    pub params: BTreeMap<String, Value>,
}

impl Metadata {
    fn new(generator: &str, seed: u64, params: Value) -> Self {
        let params = match params {
            Value::Object(m) => m.into_iter().collect(),
            _ => BTreeMap::new(),
        };
        Self {
            generator: generator.to_string(),
            seed,
            params,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub x: DMatrix<f64>,
    pub y: Labels,
    pub metadata: Metadata,
    /// Ground-truth directions (one per row), when the generator has them.
    pub directions: Option<DMatrix<f64>>,
}

impl SyntheticDataset {
    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn split(&self, start: usize, len: usize) -> SyntheticDataset {
        let y = match &self.y {
            Labels::Real(v) => Labels::Real(v[start..start + len].to_vec()),
            Labels::Binary(v) => Labels::Binary(v[start..start + len].to_vec()),
        };
        SyntheticDataset {
            x: self.x.rows(start, len).into_owned(),
            y,
            metadata: self.metadata.clone(),
            directions: self.directions.clone(),
        }
    }
}

/// Gaussian `rows × cols` matrix, redrawn until its condition number is at most `cond_max`.
fn well_conditioned(g: &mut rng::Prng, rows: usize, cols: usize, cond_max: f64) -> DMatrix<f64> {
    loop {
        let m = rng::normal_matrix(g, rows, cols);
        if linalg::condition_number(&m) <= cond_max {
            return m;
        }
    }
}

fn uniform_signs(g: &mut rng::Prng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if g.random_bool(0.5) { 1.0 } else { -1.0 }).collect()
}

/// `a, b` uniform on `{−1, +1}` embedded by a random affine map into `R^d`;
/// label `1[a = b]`.
pub fn gen_xor(d: usize, n_samples: usize, seed: u64) -> Result<SyntheticDataset> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("xor embedding dimension {d} < 2")));
    }
    let mut g_bits = rng::stream(seed, 1);
    let mut g_map = rng::stream(seed, 2);
    let a = uniform_signs(&mut g_bits, n_samples);
    let b = uniform_signs(&mut g_bits, n_samples);
    let embed = well_conditioned(&mut g_map, d, 2, EMBED_COND_MAX);
    let shift = rng::normal_vector(&mut g_map, d);
    let x = DMatrix::from_fn(n_samples, d, |i, j| {
        embed[(j, 0)] * a[i] + embed[(j, 1)] * b[i] + shift[j]
    });
    let y = (0..n_samples).map(|i| a[i] == b[i]).collect();
    Ok(SyntheticDataset {
        x,
        y: Labels::Binary(y),
        metadata: Metadata::new("xor", seed, json!({ "d": d, "n_samples": n_samples })),
        directions: Some(embed.transpose()),
    })
}

/// Circular parity: `2N` training points at angles `πk/N` with alternating
/// labels, then `test_points` held-out points on the unit circle with
/// uniform angle and the label of the nearest training angle. The first `2N`
/// rows are the training set.
pub fn gen_circular_parity(n: usize, test_points: usize, seed: u64) -> Result<SyntheticDataset> {
    gen_circular_parity_jittered(n, test_points, 0.0, seed)
}

/// Circular parity with held-out radii drawn from `U[1 - jitter, 1 + jitter]`.
pub fn gen_circular_parity_jittered(
    n: usize,
    test_points: usize,
    radius_jitter: f64,
    seed: u64,
) -> Result<SyntheticDataset> {
    if !(2..=8).contains(&n) {
        return Err(Error::InvalidArgument(format!(
            "circular parity order {n} not in 2..=8"
        )));
    }
    if !(0.0..1.0).contains(&radius_jitter) {
        return Err(Error::InvalidArgument(format!(
            "radius jitter {radius_jitter} not in [0, 1)"
        )));
    }
    let mut g = rng::stream(seed, 1);
    let total = 2 * n + test_points;
    let mut x = DMatrix::zeros(total, 2);
    let mut y = Vec::with_capacity(total);
    let nf = n as f64;
    for k in 0..2 * n {
        let theta = std::f64::consts::PI * k as f64 / nf;
        x[(k, 0)] = theta.cos();
        x[(k, 1)] = theta.sin();
        y.push(k % 2 == 1);
    }
    for i in 0..test_points {
        let theta = g.random_range(0.0..std::f64::consts::TAU);
        let r = if radius_jitter > 0.0 {
            g.random_range(1.0 - radius_jitter..=1.0 + radius_jitter)
        } else {
            1.0
        };
        x[(2 * n + i, 0)] = r * theta.cos();
        x[(2 * n + i, 1)] = r * theta.sin();
        let sector = (theta * nf / std::f64::consts::PI).round() as usize;
        y.push(sector % 2 == 1);
    }
    Ok(SyntheticDataset {
        x,
        y: Labels::Binary(y),
        metadata: Metadata::new(
            "circular-parity",
            seed,
            json!({ "n": n, "test_points": test_points, "radius_jitter": radius_jitter }),
        ),
        directions: None,
    })
}

/// Area regression: `w, h ~ U[0, 1]`, `y = wh`, embedded as
/// `z = B[w; h] + b + σ P⊥ η` where `P⊥` projects off the span of `B`.
/// Rows `0..n_train` are training rows. `directions` holds `Bᵀ`.
pub fn gen_area(d: usize, sigma: f64, n_train: usize, n_test: usize, seed: u64) -> Result<SyntheticDataset> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("area embedding dimension {d} < 2")));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise scale {sigma} must be non-negative"
        )));
    }
    let mut g_lat = rng::stream(seed, 1);
    let mut g_map = rng::stream(seed, 2);
    let mut g_noise = rng::stream(seed, 3);
    let n = n_train + n_test;
    let b_mat = well_conditioned(&mut g_map, d, 2, EMBED_COND_MAX);
    let offset = rng::normal_vector(&mut g_map, d);
    let q = b_mat.clone().qr().q();
    let p_perp = DMatrix::<f64>::identity(d, d) - &q * q.transpose();
    let mut latent = DMatrix::zeros(n, 2);
    for i in 0..n {
        latent[(i, 0)] = g_lat.random_range(0.0..1.0);
        latent[(i, 1)] = g_lat.random_range(0.0..1.0);
    }
    let noise = rng::normal_matrix(&mut g_noise, n, d) * &p_perp * sigma;
    let mut x = &latent * b_mat.transpose() + noise;
    for (j, mut col) in x.column_iter_mut().enumerate() {
        col.add_scalar_mut(offset[j]);
    }
    let y = (0..n).map(|i| latent[(i, 0)] * latent[(i, 1)]).collect();
    Ok(SyntheticDataset {
        x,
        y: Labels::Real(y),
        metadata: Metadata::new(
            "area",
            seed,
            json!({ "d": d, "sigma": sigma, "n_train": n_train, "n_test": n_test }),
        ),
        directions: Some(b_mat.transpose()),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentTransferParams {
    pub d_source: usize,
    pub d_target: usize,
    pub latent: usize,
    pub k_nuisance: usize,
    pub sigma: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_primitives: usize,
    pub n_heldout_in_span: usize,
}

impl Default for LatentTransferParams {
    fn default() -> Self {
        Self {
            d_source: 64,
            d_target: 128,
            latent: 8,
            k_nuisance: 0,
            sigma: 0.01,
            n_train: 5000,
            n_val: 1000,
            n_primitives: 5,
            n_heldout_in_span: 2,
        }
    }
}

/// Paired source/target activations sharing a latent concept vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentTransfer {
    pub params: LatentTransferParams,
    pub metadata: Metadata,
    pub source_train: DMatrix<f64>,
    pub target_train: DMatrix<f64>,
    pub source_val: DMatrix<f64>,
    pub target_val: DMatrix<f64>,
    pub latent_train: DMatrix<f64>,
    pub latent_val: DMatrix<f64>,
    /// Unit rows in latent space.
    pub primitives: DMatrix<f64>,
    pub heldout_in_span: DMatrix<f64>,
    pub out_of_span: DVector<f64>,
}

impl LatentTransfer {
    /// Labels `1[u · c > 0]` on the training and validation latents.
    pub fn labels(&self, u: &DVector<f64>) -> Result<(Vec<bool>, Vec<bool>)> {
        crate::error::check_dim("concept direction", self.params.latent, u.len())?;
        let lab = |c: &DMatrix<f64>| (c * u).iter().map(|v| *v > 0.0).collect();
        Ok((lab(&self.latent_train), lab(&self.latent_val)))
    }

    /// Orthonormal basis (columns) of the primitive span in latent space.
    pub fn primitive_span(&self) -> DMatrix<f64> {
        orthonormal_rows_basis(&self.primitives)
    }
}

fn orthonormal_rows_basis(rows: &DMatrix<f64>) -> DMatrix<f64> {
    let s = linalg::svd(rows);
    let tol = 1e-10 * s.singular_values[0];
    let r = s.singular_values.iter().filter(|v| **v > tol).count();
    s.v.columns(0, r).into_owned()
}

/// Unit vector orthogonal to the column span of `basis` (orthonormal columns).
fn unit_orthogonal(g: &mut rng::Prng, basis: &DMatrix<f64>) -> DVector<f64> {
    loop {
        let v = rng::normal_vector(g, basis.nrows());
        let r = &v - basis * (basis.transpose() * &v);
        let n = r.norm();
        if n > 1e-6 {
            return r / n;
        }
    }
}

/// `h = A c + B n + ε` for source and target with a shared latent `c`.
pub fn gen_latent_transfer(p: &LatentTransferParams, seed: u64) -> Result<LatentTransfer> {
    if p.latent == 0 || p.n_primitives == 0 || p.n_primitives >= p.latent {
        return Err(Error::InvalidArgument(format!(
            "need 0 < primitives ({}) < latent dimension ({})",
            p.n_primitives, p.latent
        )));
    }
    if !(p.sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise scale {} must be non-negative",
            p.sigma
        )));
    }
    let mut g_maps = rng::stream(seed, 1);
    let mut g_lat = rng::stream(seed, 2);
    let mut g_src = rng::stream(seed, 3);
    let mut g_tgt = rng::stream(seed, 4);
    let mut g_dir = rng::stream(seed, 5);
    let a_s = rng::normal_matrix(&mut g_maps, p.d_source, p.latent);
    let a_t = rng::normal_matrix(&mut g_maps, p.d_target, p.latent);
    let b_s = rng::normal_matrix(&mut g_maps, p.d_source, p.k_nuisance);
    let b_t = rng::normal_matrix(&mut g_maps, p.d_target, p.k_nuisance);
    let n = p.n_train + p.n_val;
    let c = rng::normal_matrix(&mut g_lat, n, p.latent);
    let embed = |g: &mut rng::Prng, a: &DMatrix<f64>, b: &DMatrix<f64>| {
        let nuis = rng::normal_matrix(g, n, p.k_nuisance);
        let eps = rng::normal_matrix(g, n, a.nrows()) * p.sigma;
        &c * a.transpose() + nuis * b.transpose() + eps
    };
    let hs = embed(&mut g_src, &a_s, &b_s);
    let ht = embed(&mut g_tgt, &a_t, &b_t);

    let mut primitives = DMatrix::zeros(p.n_primitives, p.latent);
    for i in 0..p.n_primitives {
        primitives.set_row(i, &rng::unit_vector(&mut g_dir, p.latent).transpose());
    }
    let mut heldout = DMatrix::zeros(p.n_heldout_in_span, p.latent);
    for i in 0..p.n_heldout_in_span {
        let coef = rng::normal_vector(&mut g_dir, p.n_primitives);
        let v = primitives.transpose() * coef;
        heldout.set_row(i, &(v.normalize()).transpose());
    }
    let span = orthonormal_rows_basis(&primitives);
    let out_of_span = unit_orthogonal(&mut g_dir, &span);

    let rows = |m: &DMatrix<f64>, start: usize, len: usize| m.rows(start, len).into_owned();
    Ok(LatentTransfer {
        params: p.clone(),
        metadata: Metadata::new(
            "latent-transfer",
            seed,
            serde_json::to_value(p).map_err(|e| Error::InvalidArgument(e.to_string()))?,
        ),
        source_train: rows(&hs, 0, p.n_train),
        target_train: rows(&ht, 0, p.n_train),
        source_val: rows(&hs, p.n_train, p.n_val),
        target_val: rows(&ht, p.n_train, p.n_val),
        latent_train: rows(&c, 0, p.n_train),
        latent_val: rows(&c, p.n_train, p.n_val),
        primitives,
        heldout_in_span: heldout,
        out_of_span,
    })
}

/// Held-out concept `u(θ) = cos θ u_S + sin θ u_⊥` on a latent-transfer instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaConcept {
    pub theta_deg: f64,
    pub direction: DVector<f64>,
    pub in_span: DVector<f64>,
    pub orthogonal: DVector<f64>,
    pub train_labels: Vec<bool>,
    pub val_labels: Vec<bool>,
}

/// `u_S` and `u_⊥` depend only on `seed`, so a sweep over `θ` rotates a fixed pair.
pub fn gen_theta_concept(base: &LatentTransfer, theta_deg: f64, seed: u64) -> Result<ThetaConcept> {
    if !(0.0..=90.0).contains(&theta_deg) {
        return Err(Error::InvalidArgument(format!(
            "angle {theta_deg} not in [0, 90] degrees"
        )));
    }
    let mut g = rng::stream(seed, 0x7e7a);
    let span = base.primitive_span();
    let u_s = (&span * rng::unit_vector(&mut g, span.ncols())).normalize();
    let u_perp = unit_orthogonal(&mut g, &span);
    let t = theta_deg.to_radians();
    let direction = &u_s * t.cos() + &u_perp * t.sin();
    let (train_labels, val_labels) = base.labels(&direction)?;
    Ok(ThetaConcept {
        theta_deg,
        direction,
        in_span: u_s,
        orthogonal: u_perp,
        train_labels,
        val_labels,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BooleanTask {
    And,
    Xor,
    Maj3,
    And3,
    Parity3,
}

impl BooleanTask {
    pub const ALL: [BooleanTask; 5] = [
        BooleanTask::And,
        BooleanTask::Xor,
        BooleanTask::Maj3,
        BooleanTask::And3,
        BooleanTask::Parity3,
    ];

    pub fn arity(&self) -> usize {
        match self {
            BooleanTask::And | BooleanTask::Xor => 2,
            _ => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BooleanTask::And => "AND",
            BooleanTask::Xor => "XOR",
            BooleanTask::Maj3 => "MAJ3",
            BooleanTask::And3 => "AND3",
            BooleanTask::Parity3 => "PARITY3",
        }
    }

    /// Minimum polynomial-threshold degree of the composition.
    pub fn threshold_degree(&self) -> usize {
        match self {
            BooleanTask::Xor => 2,
            BooleanTask::Parity3 => 3,
            _ => 1,
        }
    }

    pub fn eval(&self, bits: &[bool]) -> bool {
        match self {
            BooleanTask::And => bits[0] && bits[1],
            BooleanTask::Xor => bits[0] != bits[1],
            BooleanTask::Maj3 => bits.iter().filter(|b| **b).count() >= 2,
            BooleanTask::And3 => bits.iter().all(|b| *b),
            BooleanTask::Parity3 => bits.iter().filter(|b| **b).count() % 2 == 1,
        }
    }
}

impl std::str::FromStr for BooleanTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BooleanTask::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown boolean task {s}")))
    }
}

/// Primitive score vectors (`±1` truth bits plus Gaussian noise) with the
/// composed label.
pub fn gen_boolean_scores(task: BooleanTask, n_samples: usize, noise: f64, seed: u64) -> Result<SyntheticDataset> {
    if !(noise >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise scale {noise} must be non-negative"
        )));
    }
    let mut g_bits = rng::stream(seed, 1);
    let mut g_noise = rng::stream(seed, 2);
    let k = task.arity();
    let mut x = DMatrix::zeros(n_samples, k);
    let mut y = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let bits: Vec<bool> = (0..k).map(|_| g_bits.random_bool(0.5)).collect();
        for (j, b) in bits.iter().enumerate() {
            x[(i, j)] = if *b { 1.0 } else { -1.0 } + noise * rng::normal(&mut g_noise);
        }
        y.push(task.eval(&bits));
    }
    Ok(SyntheticDataset {
        x,
        y: Labels::Binary(y),
        metadata: Metadata::new(
            "boolean-scores",
            seed,
            json!({ "task": task.name(), "n_samples": n_samples, "noise": noise }),
        ),
        directions: None,
    })
}

/// Near-duplicate of `row`: the row plus a perturbation of norm `eps`
/// orthogonal to it.
pub fn near_duplicate(row: &DVector<f64>, eps: f64, g: &mut rng::Prng) -> DVector<f64> {
    let unit = row.normalize();
    let basis = DMatrix::from_columns(&[unit]);
    row + unit_orthogonal(g, &basis) * eps
}

/// Appends `count` near-duplicates of uniformly chosen rows.
pub fn append_near_duplicates(w: &DMatrix<f64>, count: usize, eps: f64, seed: u64) -> DMatrix<f64> {
    let mut g = rng::stream(seed, 0xd0b1);
    let k = w.nrows();
    let mut out = w.clone().resize_vertically(k + count, 0.0);
    for i in 0..count {
        let j = g.random_range(0..k);
        out.set_row(k + i, &near_duplicate(&w.row(j).transpose(), eps, &mut g).transpose());
    }
    out
}

/// Replaces `round(fraction · k)` uniformly chosen rows, each by a
/// near-duplicate of a different row of the original bank. Returns the new
/// bank and the replaced row indices.
pub fn replace_with_near_duplicates(
    w: &DMatrix<f64>,
    fraction: f64,
    eps: f64,
    seed: u64,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "replace fraction {fraction} not in [0, 1]"
        )));
    }
    let k = w.nrows();
    if k < 2 && fraction > 0.0 {
        return Err(Error::InvalidArgument("replacement needs at least two rows".into()));
    }
    let mut g = rng::stream(seed, 0xd0b2);
    let count = ((fraction * k as f64).round() as usize).min(k);
    let mut replaced: Vec<usize> = rng::permutation(&mut g, k).into_iter().take(count).collect();
    replaced.sort_unstable();
    let mut out = w.clone();
    for &i in &replaced {
        let mut j = g.random_range(0..k - 1);
        if j >= i {
            j += 1;
        }
        out.set_row(i, &near_duplicate(&w.row(j).transpose(), eps, &mut g).transpose());
    }
    Ok((out, replaced))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xor_reproducible_and_balanced() {
        let a = gen_xor(64, 2000, 7).unwrap();
        assert_eq!(a, gen_xor(64, 2000, 7).unwrap());
        assert_ne!(a.x, gen_xor(64, 2000, 8).unwrap().x);
        let pos = a.y.as_binary().unwrap().iter().filter(|v| **v).count() as f64;
        // 4-sigma binomial band around n/2.
        assert!((pos - 1000.0).abs() < 4.0 * (2000.0f64 * 0.25).sqrt());
        assert!(gen_xor(1, 10, 0).is_err());
    }

    #[test]
    fn circular_parity_layout() {
        let ds = gen_circular_parity_jittered(2, 200, 0.1, 1).unwrap();
        assert!(gen_circular_parity_jittered(2, 10, 1.5, 1).is_err());
        let on = gen_circular_parity(3, 50, 1).unwrap();
        assert!((6..56).all(|i| (on.x[(i, 0)].hypot(on.x[(i, 1)]) - 1.0).abs() < 1e-12));
        assert_eq!(ds.rows(), 204);
        let y = ds.y.as_binary().unwrap();
        assert_eq!(&y[..4], &[false, true, false, true]);
        assert!((ds.x[(1, 0)]).abs() < 1e-15 && (ds.x[(1, 1)] - 1.0).abs() < 1e-15);
        for (i, label) in y.iter().enumerate().skip(4) {
            let (u, v) = (ds.x[(i, 0)], ds.x[(i, 1)]);
            let r = u.hypot(v);
            assert!((0.9..=1.1).contains(&r));
            // Label matches the sign of cos(Nθ) away from sector boundaries.
            let c = (2.0 * v.atan2(u)).cos();
            if c.abs() > 1e-9 {
                assert_eq!(*label, c < 0.0);
            }
        }
        assert!(gen_circular_parity(1, 10, 0).is_err());
        assert!(gen_circular_parity(9, 10, 0).is_err());
    }

    #[test]
    fn area_noiseless_is_exactly_quadratic() {
        let ds = gen_area(16, 0.0, 50, 10, 3).unwrap();
        let b = ds.directions.clone().unwrap().transpose();
        let pinv = linalg::pinv(&b, 1e-12);
        let y = ds.y.as_real().unwrap();
        let mut g = rng::stream(3, 1);
        let lat: Vec<f64> = (0..120).map(|_| g.random_range(0.0..1.0)).collect();
        for i in 0..60 {
            let (w, h) = (lat[2 * i], lat[2 * i + 1]);
            assert_eq!(y[i], w * h);
            let rec = &pinv * (ds.x.row(i) - ds.x.row(0)).transpose();
            assert!((rec[0] - (w - lat[0])).abs() < 1e-10);
            assert!((rec[1] - (h - lat[1])).abs() < 1e-10);
        }
    }

    #[test]
    fn area_noise_is_orthogonal_to_signal() {
        let ds = gen_area(12, 0.5, 40, 0, 4).unwrap();
        let b = ds.directions.clone().unwrap().transpose();
        let q = b.qr().q();
        let clean = gen_area(12, 0.0, 40, 0, 4).unwrap();
        let noise = &ds.x - &clean.x;
        assert!((noise * q).amax() < 1e-10);
        assert!((&ds.x - &clean.x).amax() > 0.1);
    }

    #[test]
    fn latent_transfer_structure() {
        let p = LatentTransferParams {
            k_nuisance: 8,
            n_train: 100,
            n_val: 50,
            ..Default::default()
        };
        let lt = gen_latent_transfer(&p, 11).unwrap();
        assert_eq!(lt.source_train.shape(), (100, 64));
        assert_eq!(lt.target_val.shape(), (50, 128));
        assert!((&lt.primitives * &lt.out_of_span).amax() < 1e-12);
        for r in lt.primitives.row_iter().chain(lt.heldout_in_span.row_iter()) {
            assert!((r.norm() - 1.0).abs() < 1e-12);
        }
        // Held-out in-span rows lie in the primitive span.
        let span = lt.primitive_span();
        for r in lt.heldout_in_span.row_iter() {
            let v = r.transpose();
            assert!((&span * (span.transpose() * &v) - &v).amax() < 1e-12);
        }
        assert_eq!(lt, gen_latent_transfer(&p, 11).unwrap());
    }

    #[test]
    fn theta_concept_geometry() {
        let p = LatentTransferParams {
            n_train: 20,
            n_val: 10,
            ..Default::default()
        };
        let lt = gen_latent_transfer(&p, 5).unwrap();
        let span = lt.primitive_span();
        for theta in [0.0, 30.0, 45.0, 90.0] {
            let c = gen_theta_concept(&lt, theta, 9).unwrap();
            let inside = (span.transpose() * &c.direction).norm_squared();
            assert!((inside - theta.to_radians().cos().powi(2)).abs() < 1e-12);
            assert!((c.direction.norm() - 1.0).abs() < 1e-12);
        }
        assert!(gen_theta_concept(&lt, 91.0, 9).is_err());
    }

    #[test]
    fn boolean_labels_follow_bits() {
        for task in BooleanTask::ALL {
            let ds = gen_boolean_scores(task, 200, 0.0, 2).unwrap();
            let y = ds.y.as_binary().unwrap();
            for (row, label) in ds.x.row_iter().zip(y) {
                let bits: Vec<bool> = row.iter().map(|v| *v > 0.0).collect();
                assert_eq!(task.eval(&bits), *label);
            }
            assert_eq!(task.name().parse::<BooleanTask>().unwrap(), task);
        }
    }

    #[test]
    fn duplicates() {
        let w = rng::normal_matrix(&mut rng::stream(1, 0), 5, 10);
        let app = append_near_duplicates(&w, 3, 0.01, 2);
        assert_eq!(app.nrows(), 8);
        assert_eq!(app.rows(0, 5), w.rows(0, 5));
        for i in 5..8 {
            let r = app.row(i).transpose();
            let j = (0..5).min_by(|a, b| {
                (&r - w.row(*a).transpose())
                    .norm()
                    .total_cmp(&(&r - w.row(*b).transpose()).norm())
            });
            let d = &r - w.row(j.unwrap()).transpose();
            assert!((d.norm() - 0.01).abs() < 1e-12);
            assert!(d.dot(&w.row(j.unwrap()).transpose()).abs() < 1e-12);
        }
        let (rep, idx) = replace_with_near_duplicates(&w, 0.75, 0.01, 3).unwrap();
        assert_eq!(idx.len(), 4);
        let kept: Vec<usize> = (0..5).filter(|i| !idx.contains(i)).collect();
        assert_eq!(rep.row(kept[0]), w.row(kept[0]));
        assert_eq!(replace_with_near_duplicates(&w, 0.25, 0.01, 3).unwrap().1.len(), 1);
    }
}
