//! Probe banks, their SVD-realized visible quotients, cross-model alignment,
//! probe transfer and coverage diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::estimators::{fit_ridge_multi, LinearModel, MultiLinearModel, RidgeConfig};
use crate::metrics::{self, MetricResult};
use crate::{linalg, rng};

/// Default relative singular-value threshold for the visible quotient.
pub const DEFAULT_REL_THRESHOLD: f64 = 1e-3;

/// Stacked linear probes; row `j` of `weights` is probe `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeBank {
    pub weights: DMatrix<f64>,
    /// Intercepts in uncentered coordinates.
    pub intercepts: DVector<f64>,
    pub concept_names: Vec<String>,
    /// Training mean shared by every probe, or zero when they differ.
    pub center: DVector<f64>,
}

impl ProbeBank {
    pub fn len(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Bank scores, one row per sample.
    pub fn scores(&self, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("bank input columns", self.dim(), h.ncols())?;
        let mut s = h * self.weights.transpose();
        for (j, mut col) in s.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.intercepts[j]);
        }
        Ok(s)
    }

    pub fn probe(&self, j: usize) -> LinearModel {
        LinearModel::new(self.weights.row(j).transpose(), self.intercepts[j])
    }
}

pub fn build_bank(probes: &[LinearModel], names: &[String]) -> Result<ProbeBank> {
    if probes.is_empty() {
        return Err(Error::Empty("probe bank"));
    }
    check_dim("probe names vs probes", probes.len(), names.len())?;
    let d = probes[0].dim();
    let mut weights = DMatrix::zeros(probes.len(), d);
    let mut intercepts = DVector::zeros(probes.len());
    for (j, p) in probes.iter().enumerate() {
        check_dim("probe dimension", d, p.dim())?;
        if p.weights.iter().all(|v| *v == 0.0) {
            return Err(Error::Degenerate(format!(
                "probe {} has an all-zero weight vector",
                names[j]
            )));
        }
        weights.set_row(j, &p.weights.transpose());
        intercepts[j] = p.effective_intercept();
    }
    let shared = probes.iter().all(|p| p.train_mean == probes[0].train_mean);
    let center = if shared {
        probes[0].train_mean.clone()
    } else {
        DVector::zeros(d)
    };
    Ok(ProbeBank {
        weights,
        intercepts,
        concept_names: names.to_vec(),
        center,
    })
}

/// Retained right singular vectors of a bank: `W ≈ U Σ Rᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuotientBasis {
    /// `d × k_eff`, orthonormal columns `R`.
    pub basis: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    /// `k × k_eff` left singular vectors `U`.
    pub left: DMatrix<f64>,
    pub rel_threshold: f64,
    pub source_bank_id: String,
}

impl QuotientBasis {
    pub fn k_eff(&self) -> usize {
        self.basis.ncols()
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Bank scores `W h = U Σ z` reconstructed from quotient coordinates.
    pub fn bank_scores(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("quotient coordinates", self.k_eff(), z.ncols())?;
        let mut us = self.left.clone();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= self.singular_values[j];
        }
        Ok(z * us.transpose())
    }

    /// Expresses a hidden-space weight vector in quotient coordinates, `Rᵀw`.
    pub fn coordinates_of(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("weight vector length", self.dim(), w.len())?;
        Ok(self.basis.transpose() * w)
    }
}

pub fn build_quotient(bank: &ProbeBank, rel_threshold: f64) -> Result<QuotientBasis> {
    if bank.is_empty() {
        return Err(Error::Empty("probe bank"));
    }
    if !(0.0..1.0).contains(&rel_threshold) {
        return Err(Error::InvalidArgument(format!(
            "relative threshold {rel_threshold} not in [0, 1)"
        )));
    }
    let s = linalg::svd(&bank.weights);
    let sigma1 = s.singular_values[0];
    let keep: Vec<usize> = (0..s.singular_values.len())
        .filter(|&i| s.singular_values[i] > rel_threshold * sigma1)
        .collect();
    if keep.is_empty() {
        return Err(Error::Degenerate("bank has no singular value above threshold".into()));
    }
    Ok(QuotientBasis {
        basis: s.v.select_columns(&keep),
        singular_values: DVector::from_iterator(keep.len(), keep.iter().map(|&i| s.singular_values[i])),
        left: s.u.select_columns(&keep),
        rel_threshold,
        source_bank_id: bank.concept_names.join("+"),
    })
}

/// Quotient coordinates `z = Rᵀh` for every row.
pub fn project(q: &QuotientBasis, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim("hidden states vs quotient", q.dim(), h.ncols())?;
    Ok(h * &q.basis)
}

/// In-span fraction `‖RRᵀw‖² / ‖w‖²`.
pub fn isf(q: &QuotientBasis, w: &DVector<f64>) -> Result<f64> {
    let nw = w.norm_squared();
    if nw == 0.0 {
        return Err(Error::Degenerate("in-span fraction of a zero vector".into()));
    }
    Ok((q.coordinates_of(w)?.norm_squared() / nw).min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignmentMethod {
    QuotientRidge,
    FullstateOls,
    Pca,
    RandomProjection,
}

impl AlignmentMethod {
    pub const ALL: [AlignmentMethod; 4] = [
        AlignmentMethod::QuotientRidge,
        AlignmentMethod::FullstateOls,
        AlignmentMethod::Pca,
        AlignmentMethod::RandomProjection,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AlignmentMethod::QuotientRidge => "quotient-ridge",
            AlignmentMethod::FullstateOls => "fullstate-ols",
            AlignmentMethod::Pca => "pca",
            AlignmentMethod::RandomProjection => "random-projection",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    /// Ridge penalty for the quotient map.
    pub ridge_alpha: f64,
    /// Penalty standing in for ordinary least squares.
    pub ols_alpha: f64,
    /// Reduced dimension for the PCA and random-projection baselines.
    pub reduced_dim: usize,
    pub seed: u64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            ridge_alpha: 1e-4,
            ols_alpha: 1e-8,
            reduced_dim: 8,
            seed: 0,
        }
    }
}

/// Centered linear reduction `y = Pᵀ(h − μ)` with orthonormal `P`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub mean: DVector<f64>,
    /// `d × r`.
    pub components: DMatrix<f64>,
}

impl Projection {
    pub fn reduce(&self, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("projection input columns", self.mean.len(), h.ncols())?;
        Ok(linalg::center_rows(h, &self.mean) * &self.components)
    }

    pub fn reconstruct(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = y * self.components.transpose();
        for (j, mut col) in h.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.mean[j]);
        }
        h
    }

    /// Top-`r` principal directions of `h`.
    pub fn pca(h: &DMatrix<f64>, r: usize) -> Result<Self> {
        let d = h.ncols();
        if r == 0 || r > d {
            return Err(Error::InvalidArgument(format!("reduced dimension {r} not in 1..={d}")));
        }
        let mean = linalg::column_means(h);
        let hc = linalg::center_rows(h, &mean);
        let eig = linalg::gram(&hc).symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
        let mut components = eig.eigenvectors.select_columns(&order[..r]);
        // Deterministic sign: largest-magnitude entry positive.
        for mut col in components.column_iter_mut() {
            let imax = col.iamax();
            if col[imax] < 0.0 {
                col.neg_mut();
            }
        }
        Ok(Self { mean, components })
    }

    /// Seeded Gaussian projection, orthonormalized.
    pub fn random(h: &DMatrix<f64>, r: usize, seed: u64) -> Result<Self> {
        let d = h.ncols();
        if r == 0 || r > d {
            return Err(Error::InvalidArgument(format!("reduced dimension {r} not in 1..={d}")));
        }
        let g = rng::normal_matrix(&mut rng::stream(seed, d as u64), d, r);
        let components = g.qr().q();
        Ok(Self {
            mean: linalg::column_means(h),
            components,
        })
    }
}

/// Fitted map from target hidden states into the source side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMap {
    pub method: AlignmentMethod,
    /// Quotient-ridge: target → source quotient coordinates; full-state:
    /// target → source hidden state; reduced baselines: reduced target →
    /// reduced source.
    pub map: MultiLinearModel,
    pub aux_projection: Option<Projection>,
    pub source_projection: Option<Projection>,
    pub ridge_alpha: f64,
}

impl AlignmentMap {
    pub fn target_dim(&self) -> usize {
        match &self.aux_projection {
            Some(p) => p.mean.len(),
            None => self.map.weights.nrows(),
        }
    }

    /// Source-side image of target states: quotient coordinates for
    /// quotient-ridge, reconstructed source hidden states otherwise.
    pub fn apply(&self, h_target: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("alignment input columns", self.target_dim(), h_target.ncols())?;
        let reduced = match &self.aux_projection {
            Some(p) => p.reduce(h_target)?,
            None => h_target.clone(),
        };
        let out = self.map.predict(&reduced)?;
        Ok(match &self.source_projection {
            Some(p) => p.reconstruct(&out),
            None => out,
        })
    }

    /// The whole map as one affine map `h ↦ Lᵀh + c`.
    fn as_affine(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (mut lin, mut off) = (self.map.weights.clone(), self.map.effective_intercept());
        if let Some(p) = &self.aux_projection {
            off = &off - lin.transpose() * (p.components.transpose() * &p.mean);
            lin = &p.components * lin;
        }
        if let Some(p) = &self.source_projection {
            off = &p.mean + &p.components * off;
            // Shape changes, so no `*=`.
            #[allow(clippy::assign_op_pattern)]
            {
                lin = lin * p.components.transpose();
            }
        }
        (lin, off)
    }
}

/// Fits an alignment from paired, unlabeled target and source activations.
pub fn fit_alignment(
    method: AlignmentMethod,
    h_target: &DMatrix<f64>,
    h_source: &DMatrix<f64>,
    q_source: &QuotientBasis,
    cfg: &AlignmentConfig,
) -> Result<AlignmentMap> {
    check_dim("paired alignment rows", h_target.nrows(), h_source.nrows())?;
    check_dim("source states vs quotient", q_source.dim(), h_source.ncols())?;
    let ridge = |alpha| RidgeConfig {
        alpha,
        fit_intercept: true,
        center: false,
    };
    let (map, aux, src, alpha) = match method {
        AlignmentMethod::QuotientRidge => {
            let z = project(q_source, h_source)?;
            (
                fit_ridge_multi(h_target, &z, &ridge(cfg.ridge_alpha))?,
                None,
                None,
                cfg.ridge_alpha,
            )
        }
        AlignmentMethod::FullstateOls => (
            fit_ridge_multi(h_target, h_source, &ridge(cfg.ols_alpha))?,
            None,
            None,
            cfg.ols_alpha,
        ),
        AlignmentMethod::Pca | AlignmentMethod::RandomProjection => {
            let (pt, ps) = if method == AlignmentMethod::Pca {
                (
                    Projection::pca(h_target, cfg.reduced_dim)?,
                    Projection::pca(h_source, cfg.reduced_dim)?,
                )
            } else {
                (
                    Projection::random(h_target, cfg.reduced_dim, rng::derive_seed(cfg.seed, "target"))?,
                    Projection::random(h_source, cfg.reduced_dim, rng::derive_seed(cfg.seed, "source"))?,
                )
            };
            let yt = pt.reduce(h_target)?;
            let ys = ps.reduce(h_source)?;
            (
                fit_ridge_multi(&yt, &ys, &ridge(cfg.ols_alpha))?,
                Some(pt),
                Some(ps),
                cfg.ols_alpha,
            )
        }
    };
    Ok(AlignmentMap {
        method,
        map,
        aux_projection: aux,
        source_projection: src,
        ridge_alpha: alpha,
    })
}

/// Pulls a source probe back to a scorer on target hidden states. The
/// quotient route keeps only the probe's visible part `Rᵀw`; the other
/// routes apply the full probe to the reconstructed source state. The
/// source intercept is carried unchanged.
pub fn transfer_probe(probe: &LinearModel, q_source: &QuotientBasis, align: &AlignmentMap) -> Result<LinearModel> {
    check_dim("probe vs source quotient", q_source.dim(), probe.dim())?;
    let w = match align.method {
        AlignmentMethod::QuotientRidge => q_source.coordinates_of(&probe.weights)?,
        _ => probe.weights.clone(),
    };
    let (lin, off) = align.as_affine();
    check_dim("probe vs alignment output", lin.ncols(), w.len())?;
    Ok(LinearModel::new(&lin * &w, off.dot(&w) + probe.effective_intercept()))
}

/// Source-side coordinates a route's own probes are trained on: quotient
/// coordinates for quotient-ridge, the full state for full-state OLS, and
/// the reduced source coordinates for the PCA and random baselines.
pub fn route_features(align: &AlignmentMap, q_source: &QuotientBasis, h_source: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match (align.method, &align.source_projection) {
        (AlignmentMethod::QuotientRidge, _) => project(q_source, h_source),
        (_, Some(p)) => p.reduce(h_source),
        (_, None) => {
            check_dim("source states vs quotient", q_source.dim(), h_source.ncols())?;
            Ok(h_source.clone())
        }
    }
}

/// Rewrites a probe fitted on [`route_features`] as a probe on source hidden
/// states with identical scores, ready for [`transfer_probe`].
pub fn lift_route_probe(align: &AlignmentMap, q_source: &QuotientBasis, probe: &LinearModel) -> Result<LinearModel> {
    let b = probe.effective_intercept();
    match (align.method, &align.source_projection) {
        (AlignmentMethod::QuotientRidge, _) => {
            check_dim("probe vs quotient coordinates", q_source.k_eff(), probe.dim())?;
            Ok(LinearModel::new(&q_source.basis * &probe.weights, b))
        }
        (_, Some(p)) => {
            check_dim("probe vs reduced coordinates", p.components.ncols(), probe.dim())?;
            let w = &p.components * &probe.weights;
            Ok(LinearModel::new(
                w,
                b - probe.weights.dot(&(p.components.transpose() * &p.mean)),
            ))
        }
        (_, None) => {
            check_dim("probe vs source states", q_source.dim(), probe.dim())?;
            Ok(LinearModel::new(probe.weights.clone(), b))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteBankCheck {
    /// `‖z1 − T_M z2‖` in mean-square norm.
    pub lhs: f64,
    /// `δ(M) / σ⁺_min(W1)`.
    pub rhs: f64,
    pub delta: f64,
    /// Largest deviation from the pointwise identity.
    pub pointwise_error: f64,
    /// Largest absolute quotient coordinate; the pointwise tolerance is relative to it.
    pub pointwise_scale: f64,
    pub transport_op_norm: f64,
    /// `σ⁺_max(W2) / σ⁺_min(W1) · ‖M‖_op`.
    pub transport_op_bound: f64,
}

impl FiniteBankCheck {
    pub fn holds(&self, slack: f64) -> bool {
        self.lhs <= self.rhs + slack
            && self.pointwise_error <= slack.max(1e-10) * self.pointwise_scale.max(1.0)
            && self.transport_op_norm <= self.transport_op_bound * (1.0 + 1e-12) + slack
    }
}

/// Checks the finite-bank shared-space bound for a score re-basing `M`
/// (`k1 × k2`) on paired samples `h1`, `h2` (rows).
pub fn finite_bank_bound_check(
    w1: &DMatrix<f64>,
    w2: &DMatrix<f64>,
    h1: &DMatrix<f64>,
    h2: &DMatrix<f64>,
    m: &DMatrix<f64>,
) -> Result<FiniteBankCheck> {
    check_dim("first bank width", w1.ncols(), h1.ncols())?;
    check_dim("second bank width", w2.ncols(), h2.ncols())?;
    check_dim("paired samples", h1.nrows(), h2.nrows())?;
    check_dim("score map rows", w1.nrows(), m.nrows())?;
    check_dim("score map columns", w2.nrows(), m.ncols())?;
    let thin = |w: &DMatrix<f64>| -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
        let s = linalg::svd(w);
        let tol = 1e-12 * s.singular_values.max();
        let keep: Vec<usize> = (0..s.singular_values.len())
            .filter(|&i| s.singular_values[i] > tol)
            .collect();
        if keep.is_empty() || s.singular_values.max() == 0.0 {
            return Err(Error::RankDeficient("bank of rank zero".into()));
        }
        Ok((
            s.u.select_columns(&keep),
            DVector::from_iterator(keep.len(), keep.iter().map(|&i| s.singular_values[i])),
            s.v.select_columns(&keep),
        ))
    };
    let (u1, s1, r1) = thin(w1)?;
    let (u2, s2, r2) = thin(w2)?;
    let s1_inv = DMatrix::from_diagonal(&s1.map(|v| 1.0 / v));
    let t = &s1_inv * u1.transpose() * m * &u2 * DMatrix::from_diagonal(&s2);
    let z1 = h1 * &r1;
    let z2 = h2 * &r2;
    let resid = &z1 - &z2 * t.transpose();
    let n = h1.nrows() as f64;
    let score_gap = h1 * w1.transpose() - h2 * w2.transpose() * m.transpose();
    let visible_gap = &score_gap * &u1;
    let pointwise = &visible_gap * &s1_inv;
    let sigma_min1 = s1.min();
    let delta = (visible_gap.norm_squared() / n).sqrt();
    Ok(FiniteBankCheck {
        lhs: (resid.norm_squared() / n).sqrt(),
        rhs: delta / sigma_min1,
        delta,
        pointwise_error: (&resid - &pointwise).amax(),
        pointwise_scale: z1.amax().max(pointwise.amax()),
        transport_op_norm: linalg::op_norm(&t),
        transport_op_bound: s2.max() / sigma_min1 * linalg::op_norm(m),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginCheck {
    pub disagreement_rate: f64,
    pub bound: f64,
}

impl MarginCheck {
    pub fn holds(&self) -> bool {
        self.disagreement_rate <= self.bound + 1e-12
    }
}

/// Sign-disagreement rate against `P[|f| ≤ γ] + E[(f − f̃)²]/γ²`.
pub fn margin_transfer_bound_check(f_src: &[f64], f_transferred: &[f64], gamma: f64) -> Result<MarginCheck> {
    check_dim("transferred scores", f_src.len(), f_transferred.len())?;
    if f_src.is_empty() {
        return Err(Error::Empty("margin check scores"));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("margin {gamma} must be positive")));
    }
    let n = f_src.len() as f64;
    let flips = f_src
        .iter()
        .zip(f_transferred)
        .filter(|(a, b)| (**a > 0.0) != (**b > 0.0))
        .count();
    let small = f_src.iter().filter(|a| a.abs() <= gamma).count();
    let mse = f_src
        .iter()
        .zip(f_transferred)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n;
    Ok(MarginCheck {
        disagreement_rate: flips as f64 / n,
        bound: small as f64 / n + mse / (gamma * gamma),
    })
}

/// In-span fraction of a concept and its full-state transfer AUROC on each target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptCoverage {
    pub isf: f64,
    pub fullstate_aurocs: Vec<f64>,
}

fn is_silent_failure(c: &ConceptCoverage, gamma: f64, floor: f64) -> bool {
    c.isf < gamma && !c.fullstate_aurocs.is_empty() && c.fullstate_aurocs.iter().all(|a| *a >= floor)
}

/// Fraction of concepts below the coverage threshold that full-state transfer
/// nonetheless carries above `auroc_floor` on every target, with a
/// concept-pool percentile bootstrap interval.
pub fn silent_failure_rate(
    concepts: &[ConceptCoverage],
    gamma: f64,
    auroc_floor: f64,
    draws: usize,
    seed: u64,
) -> Result<MetricResult> {
    if concepts.is_empty() {
        return Err(Error::Empty("concept pool"));
    }
    let hits: Vec<f64> = concepts
        .iter()
        .map(|c| {
            if is_silent_failure(c, gamma, auroc_floor) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    metrics::bootstrap_ci(
        hits.len(),
        |idx| Some(idx.iter().map(|&i| hits[i]).sum::<f64>() / idx.len() as f64),
        draws,
        seed,
        0.95,
    )
}

/// Pearson correlation between coverage deficit `1 − isf` and the
/// source-to-target AUROC drop, with a concept-pool bootstrap interval.
/// Each concept is `(isf, source AUROC, target AUROC)`.
pub fn coverage_deficit_correlation(concepts: &[(f64, f64, f64)], draws: usize, seed: u64) -> Result<MetricResult> {
    if concepts.len() < 3 {
        return Err(Error::Degenerate(
            "coverage-deficit correlation needs at least three concepts".into(),
        ));
    }
    let deficit: Vec<f64> = concepts.iter().map(|c| 1.0 - c.0).collect();
    let drop: Vec<f64> = concepts.iter().map(|c| c.1 - c.2).collect();
    metrics::pearson(&deficit, &drop)?;
    metrics::bootstrap_ci(
        concepts.len(),
        |idx| metrics::pearson(&linalg::select(&deficit, idx), &linalg::select(&drop, idx)).ok(),
        draws,
        seed,
        0.95,
    )
}

/// One row of a coverage report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub concept: String,
    pub isf: f64,
    pub deployed: bool,
    pub auroc_src: f64,
    pub auroc_tgt_quotient: f64,
    pub auroc_tgt_fullstate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub gamma: f64,
    pub rows: Vec<CoverageRow>,
    pub silent_failure_rate: Option<MetricResult>,
}

impl CoverageReport {
    pub const CSV_HEADER: &'static str = "concept,isf,deployed,auroc_src,auroc_tgt_quotient,auroc_tgt_fullstate";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let name = if r.concept.contains([',', '"', '\n']) {
                format!("\"{}\"", r.concept.replace('"', "\"\""))
            } else {
                r.concept.clone()
            };
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                name, r.isf, r.deployed, r.auroc_src, r.auroc_tgt_quotient, r.auroc_tgt_fullstate
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::LinearModel;

    fn unit_bank(k: usize, d: usize) -> ProbeBank {
        let probes: Vec<LinearModel> = (0..k)
            .map(|j| {
                let mut w = DVector::zeros(d);
                w[j] = 1.0;
                LinearModel::new(w, 0.0)
            })
            .collect();
        let names: Vec<String> = (0..k).map(|j| format!("c{j}")).collect();
        build_bank(&probes, &names).unwrap()
    }

    #[test]
    fn unit_axis_bank() {
        let bank = unit_bank(5, 8);
        assert_eq!(bank.weights, DMatrix::<f64>::identity(8, 8).rows(0, 5).into_owned());
        let q = build_quotient(&bank, DEFAULT_REL_THRESHOLD).unwrap();
        assert_eq!(q.k_eff(), 5);
        assert!(q.singular_values.iter().all(|s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn bank_errors() {
        assert!(build_bank(&[], &[]).is_err());
        let zero = LinearModel::new(DVector::zeros(3), 1.0);
        assert!(build_bank(&[zero], &["z".into()]).is_err());
        let a = LinearModel::new(DVector::from_element(3, 1.0), 0.0);
        let b = LinearModel::new(DVector::from_element(4, 1.0), 0.0);
        assert!(build_bank(&[a.clone(), b], &["a".into(), "b".into()]).is_err());
        let dup = build_bank(&[a.clone(), a], &["a".into(), "a2".into()]).unwrap();
        assert_eq!(dup.len(), 2);
    }

    #[test]
    fn dependent_direction_is_dropped() {
        let mut g = rng::stream(1, 0);
        let mut w = rng::normal_matrix(&mut g, 30, 64);
        let combo = w.row(3) * 0.5 - w.row(7) * 2.0;
        w.set_row(29, &combo);
        let probes: Vec<LinearModel> = (0..30).map(|j| LinearModel::new(w.row(j).transpose(), 0.0)).collect();
        let names: Vec<String> = (0..30).map(|j| j.to_string()).collect();
        let q = build_quotient(&build_bank(&probes, &names).unwrap(), DEFAULT_REL_THRESHOLD).unwrap();
        assert_eq!(q.k_eff(), 29);
    }

    #[test]
    fn projection_identities() {
        let mut g = rng::stream(2, 0);
        let w = rng::normal_matrix(&mut g, 4, 10);
        let probes: Vec<LinearModel> = (0..4).map(|j| LinearModel::new(w.row(j).transpose(), 0.0)).collect();
        let names: Vec<String> = (0..4).map(|j| j.to_string()).collect();
        let bank = build_bank(&probes, &names).unwrap();
        let q = build_quotient(&bank, DEFAULT_REL_THRESHOLD).unwrap();
        let h = rng::normal_matrix(&mut g, 20, 10);
        let z = project(&q, &h).unwrap();
        assert!((q.bank_scores(&z).unwrap() - &h * w.transpose()).amax() < 1e-10);
        // Kernel directions project to zero.
        let kernel = DMatrix::<f64>::identity(10, 10) - &q.basis * q.basis.transpose();
        let hk = &h * kernel;
        assert!(project(&q, &hk).unwrap().amax() < 1e-10);
        let basis = unit_bank(3, 6);
        let qi = build_quotient(&basis, DEFAULT_REL_THRESHOLD).unwrap();
        let x = rng::normal_matrix(&mut g, 5, 6);
        let zi = project(&qi, &x).unwrap();
        for j in 0..3 {
            assert!((zi.column(j).abs() - x.column(j).abs()).amax() < 1e-12);
        }
    }

    #[test]
    fn isf_cases() {
        let q = build_quotient(&unit_bank(3, 6), DEFAULT_REL_THRESHOLD).unwrap();
        let mut w = DVector::zeros(6);
        w[1] = 2.0;
        assert!((isf(&q, &w).unwrap() - 1.0).abs() < 1e-10);
        let mut o = DVector::zeros(6);
        o[4] = 1.0;
        assert_eq!(isf(&q, &o).unwrap(), 0.0);
        let theta = 0.3f64;
        let mixed = &w / 2.0 * theta.cos() + &o * theta.sin();
        assert!((isf(&q, &mixed).unwrap() - theta.cos().powi(2)).abs() < 1e-10);
        assert!(isf(&q, &DVector::zeros(6)).is_err());
    }

    #[test]
    fn self_alignment_reproduces_probe() {
        let mut g = rng::stream(3, 0);
        let h = rng::normal_matrix(&mut g, 300, 6);
        let probes: Vec<LinearModel> = (0..3)
            .map(|_| LinearModel::new(rng::normal_vector(&mut g, 6), 0.2))
            .collect();
        let names: Vec<String> = (0..3).map(|j| j.to_string()).collect();
        let bank = build_bank(&probes, &names).unwrap();
        let q = build_quotient(&bank, DEFAULT_REL_THRESHOLD).unwrap();
        let cfg = AlignmentConfig::default();
        for method in [AlignmentMethod::QuotientRidge, AlignmentMethod::FullstateOls] {
            let map = fit_alignment(method, &h, &h, &q, &cfg).unwrap();
            let t = transfer_probe(&probes[0], &q, &map).unwrap();
            let d = (t.decision_function(&h).unwrap() - probes[0].decision_function(&h).unwrap()).amax();
            assert!(d < 1e-4, "{method:?} {d}");
        }
    }

    #[test]
    fn transferred_model_matches_mapped_scores() {
        let mut g = rng::stream(4, 0);
        let hs = rng::normal_matrix(&mut g, 200, 6);
        let mix = rng::normal_matrix(&mut g, 6, 9);
        let ht = &hs * &mix + rng::normal_matrix(&mut g, 200, 9) * 0.1;
        let probes: Vec<LinearModel> = (0..2)
            .map(|_| LinearModel::new(rng::normal_vector(&mut g, 6), -0.3))
            .collect();
        let bank = build_bank(&probes, &["a".into(), "b".into()]).unwrap();
        let q = build_quotient(&bank, DEFAULT_REL_THRESHOLD).unwrap();
        let cfg = AlignmentConfig {
            reduced_dim: 4,
            ..Default::default()
        };
        for method in AlignmentMethod::ALL {
            let map = fit_alignment(method, &ht, &hs, &q, &cfg).unwrap();
            let t = transfer_probe(&probes[1], &q, &map).unwrap();
            let mapped = map.apply(&ht).unwrap();
            let w = match method {
                AlignmentMethod::QuotientRidge => q.coordinates_of(&probes[1].weights).unwrap(),
                _ => probes[1].weights.clone(),
            };
            let mut expect = mapped * w;
            expect.add_scalar_mut(probes[1].effective_intercept());
            assert!((t.decision_function(&ht).unwrap() - expect).amax() < 1e-9, "{method:?}");
        }
    }

    #[test]
    fn lifted_route_probe_keeps_scores() {
        let mut g = rng::stream(5, 0);
        let hs = rng::normal_matrix(&mut g, 150, 6) + DMatrix::from_element(150, 6, 0.7);
        let ht = &hs * rng::normal_matrix(&mut g, 6, 8);
        let probes: Vec<LinearModel> = (0..3)
            .map(|_| LinearModel::new(rng::normal_vector(&mut g, 6), 0.1))
            .collect();
        let q = build_quotient(
            &build_bank(&probes, &["a".into(), "b".into(), "c".into()]).unwrap(),
            1e-3,
        )
        .unwrap();
        let cfg = AlignmentConfig {
            reduced_dim: 4,
            ..Default::default()
        };
        for method in AlignmentMethod::ALL {
            let map = fit_alignment(method, &ht, &hs, &q, &cfg).unwrap();
            let f = route_features(&map, &q, &hs).unwrap();
            let mut native = LinearModel::new(rng::normal_vector(&mut g, f.ncols()), -0.4);
            native.train_mean = rng::normal_vector(&mut g, f.ncols());
            let lifted = lift_route_probe(&map, &q, &native).unwrap();
            let d = (lifted.decision_function(&hs).unwrap() - native.decision_function(&f).unwrap()).amax();
            assert!(d < 1e-10, "{method:?} {d}");
            // Transferred scores equal the native probe on the mapped coordinates.
            let t = transfer_probe(&lifted, &q, &map).unwrap();
            let mapped = match method {
                AlignmentMethod::QuotientRidge => map.apply(&ht).unwrap(),
                AlignmentMethod::FullstateOls => map.apply(&ht).unwrap(),
                _ => map
                    .map
                    .predict(&map.aux_projection.as_ref().unwrap().reduce(&ht).unwrap())
                    .unwrap(),
            };
            let d = (t.decision_function(&ht).unwrap() - native.decision_function(&mapped).unwrap()).amax();
            assert!(d < 1e-9, "{method:?} {d}");
        }
    }

    #[test]
    fn alignment_rejects_row_mismatch() {
        let q = build_quotient(&unit_bank(2, 4), DEFAULT_REL_THRESHOLD).unwrap();
        let err = fit_alignment(
            AlignmentMethod::QuotientRidge,
            &DMatrix::zeros(5, 3),
            &DMatrix::zeros(6, 4),
            &q,
            &AlignmentConfig::default(),
        );
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn finite_bank_exact_case() {
        let mut g = rng::stream(5, 0);
        let w = rng::normal_matrix(&mut g, 4, 7);
        let h = rng::normal_matrix(&mut g, 50, 7);
        let c = finite_bank_bound_check(&w, &w, &h, &h, &DMatrix::identity(4, 4)).unwrap();
        assert!(c.lhs < 1e-10 && c.rhs < 1e-10);
        assert!(c.holds(1e-10));
    }

    #[test]
    fn margin_cases() {
        let f = [1.0, -2.0, 0.5, -0.7];
        let same = margin_transfer_bound_check(&f, &f, 0.1).unwrap();
        assert_eq!(same.disagreement_rate, 0.0);
        assert!(same.holds());
        let clustered = [0.0, 0.01, -0.01, 0.02];
        let c = margin_transfer_bound_check(&clustered, &[0.01, -0.01, 0.0, 0.02], 0.1).unwrap();
        assert!(c.bound >= 1.0 && c.holds());
    }

    #[test]
    fn silent_failure_cases() {
        let covered = vec![
            ConceptCoverage {
                isf: 0.5,
                fullstate_aurocs: vec![0.9, 0.95]
            };
            4
        ];
        let r = silent_failure_rate(&covered, 0.05, 0.75, 1000, 1).unwrap();
        assert_eq!(r.value, 0.0);
        let single = [ConceptCoverage {
            isf: 0.01,
            fullstate_aurocs: vec![0.9],
        }];
        let r = silent_failure_rate(&single, 0.05, 0.75, 1000, 1).unwrap();
        assert_eq!((r.value, r.ci_low, r.ci_high), (1.0, Some(1.0), Some(1.0)));
        assert!(silent_failure_rate(&[], 0.05, 0.75, 1000, 1).is_err());
    }

    #[test]
    fn deficit_correlation_cases() {
        let anti: Vec<(f64, f64, f64)> = [0.1, 0.4, 0.6, 0.9]
            .iter()
            .map(|&i| (i, 0.9, 0.9 + (1.0 - i)))
            .collect();
        let r = coverage_deficit_correlation(&anti, 500, 2).unwrap();
        assert!((r.value + 1.0).abs() < 1e-12);
        let flat: Vec<(f64, f64, f64)> = [0.1, 0.4, 0.6].iter().map(|&i| (i, 0.9, 0.8)).collect();
        assert!(matches!(
            coverage_deficit_correlation(&flat, 500, 2),
            Err(Error::ZeroVariance(_))
        ));
    }

    #[test]
    fn report_csv_layout() {
        let report = CoverageReport {
            gamma: 0.05,
            rows: vec![CoverageRow {
                concept: "tox,ic".into(),
                isf: 0.5,
                deployed: true,
                auroc_src: 0.9,
                auroc_tgt_quotient: 0.8,
                auroc_tgt_fullstate: 0.85,
            }],
            silent_failure_rate: None,
        };
        let csv = report.to_csv();
        assert!(csv.starts_with(CoverageReport::CSV_HEADER));
        assert!(csv.contains("\"tox,ic\",0.5,true,0.9,0.8,0.85"));
    }
}
