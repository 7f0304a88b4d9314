//! Probe families of the polynomial hierarchy and their transport under
//! affine reparameterization of the hidden space.

pub mod affine;
pub mod cp;
pub mod degree;
pub mod kernel;
pub mod polynomial;
pub mod sparse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{LinearModel, LogisticConfig, RidgeConfig};

pub use affine::{sample_affine, whitening, AffineTransform};
pub use cp::{cp_param_count, fit_cp, fit_cp_whitened, CpProbe, CpValidation};
pub use degree::{recover_min_degree, stratified_split, DegreeRecovery, SplitConfig};
pub use kernel::{fit_kernel_poly, KernelPolyModel};
pub use polynomial::{fit_polynomial, fit_quadratic, transport_linear, PolynomialProbe, QuadraticForm, QuadraticProbe};
pub use sparse::{
    evaluate_frozen_sparse, fit_diagonal_quadratic, fit_sparse_quadratic, SelectionRule, SparseQuadraticProbe,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    Regression(&'a [f64]),
    Classification(&'a [bool]),
}

impl Target<'_> {
    pub fn len(&self) -> usize {
        match self {
            Target::Regression(y) => y.len(),
            Target::Classification(y) => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The task and targets as reals (labels as 0/1).
    pub fn as_real(&self) -> (Task, Vec<f64>) {
        match self {
            Target::Regression(y) => (Task::Regression, y.to_vec()),
            Target::Classification(y) => (
                Task::Classification,
                y.iter().map(|v| if *v { 1.0 } else { 0.0 }).collect(),
            ),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "estimator")]
pub enum FitConfig {
    Ridge(RidgeConfig),
    Logistic(LogisticConfig),
}

/// Self-describing serialized probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family")]
pub enum ProbeDocument {
    Linear {
        model: LinearModel,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<FitConfig>,
    },
    Polynomial {
        probe: PolynomialProbe,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<FitConfig>,
    },
    SparseQuadratic {
        probe: SparseQuadraticProbe,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<RidgeConfig>,
    },
    Cp {
        probe: CpProbe,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<crate::estimators::OptimizerConfig>,
    },
}

impl ProbeDocument {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(format!("probe serialization: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut doc: Self =
            serde_json::from_str(s).map_err(|e| Error::InvalidArgument(format!("probe deserialization: {e}")))?;
        match &mut doc {
            ProbeDocument::Polynomial { probe, .. } => {
                probe.feature_map = probe.feature_map.clone().restore();
            }
            ProbeDocument::Cp { probe, .. } => {
                probe.tail_map = probe.tail_map.clone().restore();
            }
            _ => {}
        }
        Ok(doc)
    }
}
