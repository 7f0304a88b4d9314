//! Experiment runner, activation-file I/O and the zero-label transfer
//! pipeline built on `probequot-core`.

pub mod activation;
pub mod config;
pub mod convert;
pub mod error;
pub mod experiments;
pub mod ingest;
pub mod report;

pub use error::{HarnessError, Result};
