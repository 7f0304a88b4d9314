//! Zero-target-label transfer on ingested activations: train a concept bank
//! on labelled source states, build its visible quotient, align target to
//! source on unlabelled paired states, and score every concept on the target.
//!
//! On-disk layout consumed by [`load_inputs`]:
//!
//! ```text
//! <source-dir>/<concept>.apqt   source states with labels
//! <paired-dir>/source.apqt      paired source states (labels ignored)
//! <paired-dir>/target.apqt      paired target states, same row order
//! <target-dir>/<concept>.apqt   target evaluation states with labels
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use probequot_core::estimators::{fit_logistic, LinearModel, LogisticConfig};
use probequot_core::linalg::select_rows;
use probequot_core::metrics::auroc;
use probequot_core::probes::{stratified_split, SplitConfig};
use probequot_core::quotient::{
    build_bank, build_quotient, fit_alignment, isf, lift_route_probe, route_features, silent_failure_rate,
    transfer_probe, AlignmentConfig, AlignmentMethod, ConceptCoverage, CoverageReport, CoverageRow, QuotientBasis,
    DEFAULT_REL_THRESHOLD,
};
use probequot_core::rng::derive_seed;
use serde::{Deserialize, Serialize};

use crate::activation::read_activations;
use crate::error::{HarnessError, Result};

pub const EXTENSION: &str = "apqt";

/// Labelled states for one concept on both sides.
#[derive(Clone, Debug)]
pub struct ConceptInput {
    pub name: String,
    pub source: DMatrix<f64>,
    pub source_labels: Vec<bool>,
    pub target: DMatrix<f64>,
    pub target_labels: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct IngestInputs {
    pub concepts: Vec<ConceptInput>,
    pub paired_source: DMatrix<f64>,
    pub paired_target: DMatrix<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// Concepts whose probes form the bank; empty means every concept.
    pub bank: Vec<String>,
    pub gamma: f64,
    pub auroc_floor: f64,
    pub rel_threshold: f64,
    pub logistic: LogisticConfig,
    pub ridge_alpha: f64,
    pub ols_alpha: f64,
    /// Fraction of each concept's source rows held out for in-model AUROC.
    pub eval_fraction: f64,
    pub seed: u64,
    pub bootstrap_draws: usize,
    /// Caller's assertion that evaluation rows are disjoint from the paired
    /// alignment rows. Not verified; echoed in the summary.
    pub evaluation_disjoint: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        let a = AlignmentConfig::default();
        Self {
            bank: Vec::new(),
            gamma: 0.05,
            auroc_floor: 0.75,
            rel_threshold: DEFAULT_REL_THRESHOLD,
            logistic: LogisticConfig {
                inverse_reg: 1.0,
                ..Default::default()
            },
            ridge_alpha: a.ridge_alpha,
            ols_alpha: a.ols_alpha,
            eval_fraction: 0.3,
            seed: 42,
            bootstrap_draws: 2000,
            evaluation_disjoint: false,
        }
    }
}

/// Target scores of one concept under both transfer routes.
#[derive(Clone, Debug)]
pub struct ConceptScores {
    pub concept: String,
    /// Source hidden-state probe trained on the non-held-out rows.
    pub probe: LinearModel,
    pub quotient: DVector<f64>,
    pub fullstate: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct IngestOutcome {
    pub report: CoverageReport,
    pub scores: Vec<ConceptScores>,
    pub k_eff: usize,
    pub evaluation_disjoint: bool,
}

/// Run summary written next to the report CSV.
#[derive(Clone, Debug, Serialize)]
pub struct IngestSummary<'a> {
    pub concepts: usize,
    pub bank: Vec<String>,
    pub k_eff: usize,
    pub paired_rows: usize,
    pub evaluation_disjoint_asserted: bool,
    pub config: &'a IngestConfig,
    pub report: &'a CoverageReport,
}

fn shape_error(what: impl Into<String>) -> HarnessError {
    HarnessError::Config(what.into())
}

fn check_binary(name: &str, side: &str, labels: &[bool]) -> Result<()> {
    let pos = labels.iter().filter(|v| **v).count();
    if pos == 0 || pos == labels.len() {
        return Err(shape_error(format!("concept {name}: {side} labels are single-class")));
    }
    Ok(())
}

/// Every shape and label precondition, checked before any fitting.
fn validate(inputs: &IngestInputs, cfg: &IngestConfig) -> Result<()> {
    let (ps, pt) = (&inputs.paired_source, &inputs.paired_target);
    if ps.nrows() != pt.nrows() {
        return Err(shape_error(format!(
            "paired files have {} source rows and {} target rows",
            ps.nrows(),
            pt.nrows()
        )));
    }
    if ps.nrows() == 0 {
        return Err(shape_error("paired files are empty"));
    }
    if inputs.concepts.is_empty() {
        return Err(shape_error("no concepts"));
    }
    if !(cfg.eval_fraction > 0.0 && cfg.eval_fraction < 1.0) {
        return Err(shape_error(format!(
            "eval_fraction {} not in (0, 1)",
            cfg.eval_fraction
        )));
    }
    let (ds, dt) = (ps.ncols(), pt.ncols());
    for c in &inputs.concepts {
        if c.source.ncols() != ds || c.target.ncols() != dt {
            return Err(shape_error(format!(
                "concept {}: widths source {} / target {} differ from paired {ds} / {dt}",
                c.name,
                c.source.ncols(),
                c.target.ncols()
            )));
        }
        if c.source.nrows() != c.source_labels.len() || c.target.nrows() != c.target_labels.len() {
            return Err(shape_error(format!(
                "concept {}: label count differs from row count",
                c.name
            )));
        }
        check_binary(&c.name, "source", &c.source_labels)?;
        check_binary(&c.name, "target", &c.target_labels)?;
    }
    for b in &cfg.bank {
        if !inputs.concepts.iter().any(|c| &c.name == b) {
            return Err(shape_error(format!("bank concept {b} has no input")));
        }
    }
    Ok(())
}

/// Trains the bank, builds the quotient, fits both alignments and scores
/// each concept's target states.
pub fn ingest_bank_and_transfer(inputs: &IngestInputs, cfg: &IngestConfig) -> Result<IngestOutcome> {
    validate(inputs, cfg)?;
    let split = |name: &str, labels: &[bool]| {
        stratified_split(
            labels,
            &SplitConfig {
                train_fraction: 1.0 - cfg.eval_fraction,
                seed: derive_seed(cfg.seed, &format!("split-{name}")),
            },
        )
    };

    struct Trained {
        probe: LinearModel,
        fit_rows: DMatrix<f64>,
        fit_labels: Vec<bool>,
        auroc_src: f64,
    }
    let mut trained = Vec::with_capacity(inputs.concepts.len());
    for c in &inputs.concepts {
        let (fit_idx, eval_idx) = split(&c.name, &c.source_labels);
        let fit_rows = select_rows(&c.source, &fit_idx);
        let fit_labels: Vec<bool> = fit_idx.iter().map(|&i| c.source_labels[i]).collect();
        let eval_labels: Vec<bool> = eval_idx.iter().map(|&i| c.source_labels[i]).collect();
        let probe = fit_logistic(&fit_rows, &fit_labels, &cfg.logistic)?;
        let held = probe.decision_function(&select_rows(&c.source, &eval_idx))?;
        let auroc_src = auroc(held.as_slice(), &eval_labels)?;
        trained.push(Trained {
            probe,
            fit_rows,
            fit_labels,
            auroc_src,
        });
    }

    let in_bank = |name: &str| cfg.bank.is_empty() || cfg.bank.iter().any(|b| b == name);
    let (mut probes, mut names) = (Vec::new(), Vec::new());
    for (c, t) in inputs.concepts.iter().zip(&trained) {
        if in_bank(&c.name) {
            probes.push(t.probe.clone());
            names.push(c.name.clone());
        }
    }
    let q: QuotientBasis = build_quotient(&build_bank(&probes, &names)?, cfg.rel_threshold)?;

    let acfg = AlignmentConfig {
        ridge_alpha: cfg.ridge_alpha,
        ols_alpha: cfg.ols_alpha,
        seed: derive_seed(cfg.seed, "alignment"),
        ..Default::default()
    };
    let (ps, pt) = (&inputs.paired_source, &inputs.paired_target);
    let quotient = fit_alignment(AlignmentMethod::QuotientRidge, pt, ps, &q, &acfg)?;
    let fullstate = fit_alignment(AlignmentMethod::FullstateOls, pt, ps, &q, &acfg)?;

    let mut rows = Vec::with_capacity(trained.len());
    let mut scores = Vec::with_capacity(trained.len());
    let mut coverage = Vec::with_capacity(trained.len());
    for (c, t) in inputs.concepts.iter().zip(trained) {
        let concept_isf = isf(&q, &t.probe.weights)?;
        let native = fit_logistic(
            &route_features(&quotient, &q, &t.fit_rows)?,
            &t.fit_labels,
            &cfg.logistic,
        )?;
        let lifted = lift_route_probe(&quotient, &q, &native)?;
        let s_q = transfer_probe(&lifted, &q, &quotient)?.decision_function(&c.target)?;
        let s_f = transfer_probe(&t.probe, &q, &fullstate)?.decision_function(&c.target)?;
        let row = CoverageRow {
            concept: c.name.clone(),
            isf: concept_isf,
            deployed: concept_isf >= cfg.gamma,
            auroc_src: t.auroc_src,
            auroc_tgt_quotient: auroc(s_q.as_slice(), &c.target_labels)?,
            auroc_tgt_fullstate: auroc(s_f.as_slice(), &c.target_labels)?,
        };
        coverage.push(ConceptCoverage {
            isf: concept_isf,
            fullstate_aurocs: vec![row.auroc_tgt_fullstate],
        });
        rows.push(row);
        scores.push(ConceptScores {
            concept: c.name.clone(),
            probe: t.probe,
            quotient: s_q,
            fullstate: s_f,
        });
    }
    let rate = if cfg.bootstrap_draws > 0 {
        Some(silent_failure_rate(
            &coverage,
            cfg.gamma,
            cfg.auroc_floor,
            cfg.bootstrap_draws,
            derive_seed(cfg.seed, "silent-failure"),
        )?)
    } else {
        None
    };
    Ok(IngestOutcome {
        report: CoverageReport {
            gamma: cfg.gamma,
            rows,
            silent_failure_rate: rate,
        },
        scores,
        k_eff: q.k_eff(),
        evaluation_disjoint: cfg.evaluation_disjoint,
    })
}

fn labelled(path: &Path) -> Result<(DMatrix<f64>, Vec<bool>)> {
    let f = read_activations(path)?;
    let shown = path.display().to_string();
    match f.binary_labels() {
        None => Err(HarnessError::Format {
            path: shown,
            reason: "concept file has no label block".into(),
        }),
        Some(Err(v)) => Err(HarnessError::Format {
            path: shown,
            reason: format!("label value {v} is not 0 or 1"),
        }),
        Some(Ok(labels)) => Ok((f.data, labels)),
    }
}

/// Concept names (file stems) in `dir`, sorted.
pub fn concept_names(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))? {
        let p = entry.map_err(|e| HarnessError::io(dir, e))?.path();
        if p.extension().and_then(|e| e.to_str()) == Some(EXTENSION) {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                out.push(stem.to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}

fn concept_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.{EXTENSION}"))
}

/// Reads the directory layout described in the module docs. Every source
/// concept needs a target file of the same name.
pub fn load_inputs(source_dir: &Path, paired_dir: &Path, target_dir: &Path) -> Result<IngestInputs> {
    let paired_source = read_activations(paired_dir.join(format!("source.{EXTENSION}")))?.data;
    let paired_target = read_activations(paired_dir.join(format!("target.{EXTENSION}")))?.data;
    if paired_source.nrows() != paired_target.nrows() {
        return Err(shape_error(format!(
            "paired files have {} source rows and {} target rows",
            paired_source.nrows(),
            paired_target.nrows()
        )));
    }
    let names = concept_names(source_dir)?;
    if names.is_empty() {
        return Err(shape_error(format!(
            "no .{EXTENSION} files in {}",
            source_dir.display()
        )));
    }
    let mut concepts = Vec::with_capacity(names.len());
    for name in names {
        let tp = concept_path(target_dir, &name);
        if !tp.exists() {
            return Err(shape_error(format!(
                "concept {name} has no target file {}",
                tp.display()
            )));
        }
        let (source, source_labels) = labelled(&concept_path(source_dir, &name))?;
        let (target, target_labels) = labelled(&tp)?;
        concepts.push(ConceptInput {
            name,
            source,
            source_labels,
            target,
            target_labels,
        });
    }
    Ok(IngestInputs {
        concepts,
        paired_source,
        paired_target,
    })
}

/// File-path entry point: loads the layout and runs the pipeline.
pub fn ingest_from_dirs(
    source_dir: &Path,
    paired_dir: &Path,
    target_dir: &Path,
    cfg: &IngestConfig,
) -> Result<IngestOutcome> {
    ingest_bank_and_transfer(&load_inputs(source_dir, paired_dir, target_dir)?, cfg)
}

/// Writes the report CSV and a JSON summary beside it (`<stem>.json`).
pub fn write_outcome(
    out: &Path,
    outcome: &IngestOutcome,
    inputs_paired_rows: usize,
    cfg: &IngestConfig,
) -> Result<PathBuf> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    fs::write(out, outcome.report.to_csv()).map_err(|e| HarnessError::io(out, e))?;
    let summary = IngestSummary {
        concepts: outcome.report.rows.len(),
        bank: if cfg.bank.is_empty() {
            outcome.report.rows.iter().map(|r| r.concept.clone()).collect()
        } else {
            cfg.bank.clone()
        },
        k_eff: outcome.k_eff,
        paired_rows: inputs_paired_rows,
        evaluation_disjoint_asserted: outcome.evaluation_disjoint,
        config: cfg,
        report: &outcome.report,
    };
    let json_path = out.with_extension("json");
    let text = serde_json::to_string_pretty(&summary)?;
    fs::write(&json_path, text).map_err(|e| HarnessError::io(&json_path, e))?;
    Ok(json_path)
}
