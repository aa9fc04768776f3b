//! Stress-testing tabular ML pipelines against realistic, structured data
//! corruption.
//!
//! The crate models pattern-gated missing values, label errors and
//! selection bias over a typed dataset, and searches for the corruption
//! that most degrades a black-box pipeline's metric under an error budget:
//! beam search over which attributes the corruption pattern depends on,
//! with Tree-structured Parzen Estimator tuning of each pattern's
//! parameters.

pub mod corruption;
pub mod dataset;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod rng;
pub mod run;
pub mod synthetic;
