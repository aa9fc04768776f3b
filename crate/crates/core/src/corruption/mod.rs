//! Pattern-gated corruption of tabular data: missing values, label errors
//! and selection bias.
//!
//! A [`CorruptionTemplate`] fixes the error type and the attributes its
//! pattern conditions on; binding its parameters yields a [`Dcp`], which
//! corrupts a tuple iff the pattern matches and the tuple's noise draw for
//! the corrupted attribute is at most `p`.

mod dcp;
mod graph;
mod pattern;
mod template;

use thiserror::Error;

pub use dcp::{
    apply, expected_fraction, matching_rows, project_to_budget, CorruptedDataset, Dcp,
    SELECTION_NOISE_ID,
};
pub use graph::{CorruptionProcess, DependencyGraph, Node};
pub use pattern::{Bound, CompiledPattern, Pattern, RangeCondition};
pub use template::{
    normalize_weights, CorruptionTemplate, Dimension, Domain, ErrorType, ParamValue,
    ParameterSpace, Theta, PROBABILITY,
};

#[derive(Debug, Error)]
pub enum CorruptionError {
    #[error("unknown attribute '{0}'")]
    UnknownAttribute(String),
    #[error("invalid condition on '{attribute}': {reason}")]
    InvalidCondition { attribute: String, reason: String },
    #[error("pattern must contain at least one condition")]
    EmptyPattern,
    #[error("theta has {found} values, parameter space has {expected} dimensions")]
    ThetaLength { expected: usize, found: usize },
    #[error("value {value} for '{dimension}' lies outside the parameter space")]
    ThetaOutOfSpace { dimension: String, value: String },
    #[error("negative width for numeric attribute '{0}'")]
    NegativeWidth(String),
    #[error("label errors require a categorical label")]
    LabelNotCategorical,
    #[error("class specification: {0}")]
    Classes(String),
    #[error("budget must lie in [0, 1], got {0}")]
    Budget(f64),
    #[error("dependency graph contains a cycle")]
    Cycle,
    #[error("attribute '{0}' has no observed values")]
    Degenerate(String),
    #[error("malformed process JSON: {0}")]
    Json(String),
    #[error("inconsistent process: {0}")]
    Inconsistent(String),
}
