//! Named experiments. Each returns an [`ExperimentReport`] carrying per-seed
//! records, a markdown table and its acceptance checks.

pub mod bounds;
pub mod hierarchy;
pub mod quotient;
pub mod regression;

use std::time::Instant;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::report::ExperimentReport;

pub struct Experiment {
    pub name: &'static str,
    pub run: fn(&ExperimentConfig) -> Result<ExperimentReport>,
    /// Wall-clock budget in seconds for the default configuration.
    pub budget_secs: Option<f64>,
}

pub const EXPERIMENTS: &[Experiment] = &[
    Experiment {
        name: "xor",
        run: hierarchy::xor,
        budget_secs: Some(30.0),
    },
    Experiment {
        name: "circular_parity",
        run: hierarchy::circular_parity,
        budget_secs: Some(60.0),
    },
    Experiment {
        name: "boolean_degree_recovery",
        run: hierarchy::boolean_degree_recovery,
        budget_secs: Some(60.0),
    },
    Experiment {
        name: "area_regression",
        run: regression::area_regression,
        budget_secs: Some(600.0),
    },
    Experiment {
        name: "cp_rank_sweep",
        run: regression::cp_rank_sweep,
        budget_secs: Some(600.0),
    },
    Experiment {
        name: "exact_reparam",
        run: regression::exact_reparam,
        budget_secs: Some(300.0),
    },
    Experiment {
        name: "softmax_symmetry",
        run: bounds::softmax_symmetry,
        budget_secs: Some(10.0),
    },
    Experiment {
        name: "robust_alignment_property",
        run: bounds::robust_alignment_property,
        budget_secs: None,
    },
    Experiment {
        name: "finite_bank_bounds",
        run: bounds::finite_bank_bounds,
        budget_secs: None,
    },
    Experiment {
        name: "quotient_transfer",
        run: quotient::quotient_transfer,
        budget_secs: Some(300.0),
    },
    Experiment {
        name: "theta_sweep",
        run: quotient::theta_sweep,
        budget_secs: None,
    },
    Experiment {
        name: "redundancy_ablation",
        run: quotient::redundancy_ablation,
        budget_secs: None,
    },
    Experiment {
        name: "basis_stability",
        run: quotient::basis_stability,
        budget_secs: None,
    },
    Experiment {
        name: "coverage_abstention",
        run: quotient::coverage_abstention,
        budget_secs: None,
    },
    Experiment {
        name: "coverage_deficit_correlation",
        run: quotient::coverage_deficit,
        budget_secs: None,
    },
];

pub fn find(name: &str) -> Option<&'static Experiment> {
    EXPERIMENTS.iter().find(|e| e.name == name)
}

pub fn names() -> Vec<&'static str> {
    EXPERIMENTS.iter().map(|e| e.name).collect()
}

/// Runs the configured experiment over all seeds and appends the runtime
/// budget check.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let exp = find(&cfg.experiment).ok_or_else(|| HarnessError::UnknownExperiment(cfg.experiment.clone()))?;
    let start = Instant::now();
    let mut rep = (exp.run)(cfg)?;
    rep.elapsed_secs = start.elapsed().as_secs_f64();
    if let Some(budget) = exp.budget_secs {
        let t = rep.elapsed_secs;
        rep.check("runtime budget", t < budget, format!("{t:.1} s (< {budget} s)"));
    }
    Ok(rep)
}
