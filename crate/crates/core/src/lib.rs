//! Affine-invariant polynomial probes, probe-visible quotients and coverage
//! diagnostics for hidden-state representations.

// Negated comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod linalg;
pub mod metrics;
pub mod polyfeat;
pub mod probes;
pub mod quotient;
pub mod rng;
pub mod symmetry;
pub mod synthgen;

pub use error::{Error, Result};
