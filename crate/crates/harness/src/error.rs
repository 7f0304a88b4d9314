use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] probequot_core::Error),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("activation file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("activation file {path} is truncated: expected {expected} bytes, found {actual}")]
    Truncated { path: String, expected: u64, actual: u64 },

    #[error("configuration: {0}")]
    Config(String),

    #[error("unknown experiment {0:?}")]
    UnknownExperiment(String),

    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
