use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context} (expected {expected}, got {actual})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("labels contain a single class")]
    SingleClass,

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{what} size {size} exceeds the limit of {limit}")]
    SizeGuard {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("readouts are not softmax-equivalent: row {row} disagrees by {discrepancy:e}")]
    NotEquivalent { row: usize, discrepancy: f64 },

    #[error("optimizer produced a non-finite loss at every start (first failure at restart {restart})")]
    OptimizerFailed { restart: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

pub(crate) fn check_finite<'a>(context: &'static str, values: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}
