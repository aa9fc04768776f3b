//! Search for the most damaging corruption under a budget: beam search over
//! pattern attribute sets, TPE tuning of each template's parameters, and
//! the proxy warm-start and sample-then-transfer shortcuts.

mod beam;
mod random;
mod tpe;
mod transfer;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corruption::{CorruptionError, Dcp, ErrorType, Theta};
use crate::dataset::{Column, DataError, Dataset};
use crate::metrics::Objective;
use crate::pipeline::{Pipeline, PipelineError};
use crate::rng;

pub use beam::{beam_search, determine_seeds, expand, max_support, sort_beam, BeamEntry, DepthTrace, SearchOutcome};
pub use random::{random_baseline, random_parameter_search, RandomBaseline};
pub use tpe::{tpe_run, tpe_suggest, uniform_theta, TpeOutcome, TpeSettings, Trial, TrialHistory};
pub use transfer::{sample_then_transfer, warm_start, TransferOutcome, WarmStartOutcome};

/// Minimum psi improvement that counts as progress between depths.
pub const IMPROVEMENT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error("no admissible seed templates: {0}")]
    NoSeeds(String),
    #[error("every evaluation failed")]
    AllFailed,
    #[error("proxy template does not fit the target data: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Corruption(#[from] CorruptionError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Error family to search over; missing values may name a target or let
/// the search try every non-label attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ErrorClass {
    MissingValue {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<String>,
    },
    LabelError,
    SelectionBias,
}

impl ErrorClass {
    /// Concrete error types over `dataset`.
    pub fn error_types(&self, dataset: &Dataset) -> Result<Vec<ErrorType>, OptimizerError> {
        let schema = dataset.schema();
        Ok(match self {
            ErrorClass::MissingValue { target: Some(t) } => {
                schema.require(t)?;
                if *t == schema.label {
                    return Err(OptimizerError::Config(
                        "the label cannot be a missing-value target".into(),
                    ));
                }
                vec![ErrorType::MissingValue { target: t.clone() }]
            }
            ErrorClass::MissingValue { target: None } => schema
                .feature_indices()
                .into_iter()
                .map(|i| ErrorType::MissingValue {
                    target: schema.attributes[i].name.clone(),
                })
                .collect(),
            ErrorClass::LabelError => {
                let Column::Categorical { levels, codes } = dataset.column(schema.label_index()) else {
                    return Err(CorruptionError::LabelNotCategorical.into());
                };
                let mut seen = vec![false; levels.len()];
                for &c in codes {
                    if let Some(s) = seen.get_mut(c as usize) {
                        *s = true;
                    }
                }
                let classes = levels
                    .iter()
                    .zip(&seen)
                    .filter(|(_, &s)| s)
                    .map(|(l, _)| l.clone())
                    .collect();
                vec![ErrorType::LabelError { classes }]
            }
            ErrorClass::SelectionBias => vec![ErrorType::SelectionBias],
        })
    }
}

fn default_beam_width() -> usize {
    3
}
fn default_max_depth() -> usize {
    3
}
fn default_tpe_iterations() -> usize {
    60
}
fn default_n_init() -> usize {
    10
}
fn default_gamma() -> f64 {
    0.25
}
fn default_pool() -> usize {
    24
}
fn default_max_attrs() -> usize {
    3
}
fn default_min_support() -> f64 {
    0.01
}
fn default_repeats() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    /// Cap on the expected fraction of corrupted tuples, in [0, 1].
    pub budget: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_beam_width")]
    pub beam_width: usize,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default = "default_tpe_iterations")]
    pub tpe_iterations: usize,
    #[serde(default = "default_n_init")]
    pub n_init: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_pool")]
    pub candidate_pool: usize,
    #[serde(default = "default_max_attrs")]
    pub max_pattern_attrs: usize,
    #[serde(default = "default_min_support")]
    pub min_support: f64,
    /// Evaluation repeats averaged per trial.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Attribute pairs never combined in one pattern.
    #[serde(default)]
    pub blocklist: Vec<(String, String)>,
}

impl SearchConfig {
    pub fn new(budget: f64, seed: u64) -> Self {
        Self {
            budget,
            seed,
            beam_width: default_beam_width(),
            max_depth: default_max_depth(),
            tpe_iterations: default_tpe_iterations(),
            n_init: default_n_init(),
            gamma: default_gamma(),
            candidate_pool: default_pool(),
            max_pattern_attrs: default_max_attrs(),
            min_support: default_min_support(),
            repeats: default_repeats(),
            blocklist: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let fail = |m: String| Err(OptimizerError::Config(m));
        if !(0.0..=1.0).contains(&self.budget) {
            return fail(format!("budget must lie in [0, 1], got {}", self.budget));
        }
        if self.beam_width < 1 || self.max_depth < 1 {
            return fail("beam_width and max_depth must be at least 1".into());
        }
        if self.n_init < 1 || self.tpe_iterations < self.n_init {
            return fail(format!(
                "need tpe_iterations >= n_init >= 1, got {} and {}",
                self.tpe_iterations, self.n_init
            ));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.min_support > 0.0 && self.min_support < 1.0) {
            return fail(format!("min_support must lie in (0, 1), got {}", self.min_support));
        }
        if self.candidate_pool < 1 || self.max_pattern_attrs < 1 || self.repeats < 1 {
            return fail("candidate_pool, max_pattern_attrs and repeats must be at least 1".into());
        }
        Ok(())
    }

    pub fn tpe_settings(&self) -> TpeSettings {
        TpeSettings::from(self)
    }
}

/// One evaluation, as written to the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub depth: usize,
    pub template: String,
    pub theta: Theta,
    pub p: f64,
    /// `None` when the evaluation failed.
    pub psi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_secs: f64,
}

/// Maps a process to its normalized objective (lower = more damage).
pub trait DcpEvaluator: Sync {
    /// Data the processes corrupt.
    fn dataset(&self) -> &Dataset;

    fn evaluate(&self, dcp: &Dcp, seed: u64) -> Result<f64, OptimizerError>;

    /// Objective without corruption, under the same seed.
    fn clean(&self, seed: u64) -> Result<f64, OptimizerError>;
}

/// Mean over `repeats` evaluations with seeds derived from `seed`.
pub fn evaluate_dcp(
    evaluator: &dyn DcpEvaluator,
    dcp: &Dcp,
    seed: u64,
    repeats: usize,
) -> Result<f64, OptimizerError> {
    let mut total = 0.0;
    for r in 0..repeats.max(1) {
        total += evaluator.evaluate(dcp, rng::derive_index(seed, r as u64))?;
    }
    Ok(total / repeats.max(1) as f64)
}

/// Clean objective averaged the same way as [`evaluate_dcp`].
pub fn evaluate_clean(evaluator: &dyn DcpEvaluator, seed: u64, repeats: usize) -> Result<f64, OptimizerError> {
    let mut total = 0.0;
    for r in 0..repeats.max(1) {
        total += evaluator.clean(rng::derive_index(seed, r as u64))?;
    }
    Ok(total / repeats.max(1) as f64)
}

/// Corrupts the training partition, trains the pipeline and scores it on
/// the untouched test partition.
#[derive(Clone)]
pub struct PipelineEvaluator {
    pub train: Dataset,
    pub test: Dataset,
    pub pipeline: Arc<dyn Pipeline + Send>,
    pub objective: Objective,
}

impl PipelineEvaluator {
    pub fn new(train: Dataset, test: Dataset, pipeline: Arc<dyn Pipeline + Send>, objective: Objective) -> Self {
        Self {
            train,
            test,
            pipeline,
            objective,
        }
    }

    /// Same pipeline and test data over a different training set.
    pub fn with_train(&self, train: Dataset) -> Self {
        Self {
            train,
            ..self.clone()
        }
    }
}

impl DcpEvaluator for PipelineEvaluator {
    fn dataset(&self) -> &Dataset {
        &self.train
    }

    fn evaluate(&self, dcp: &Dcp, seed: u64) -> Result<f64, OptimizerError> {
        let corrupted = dcp.apply(&self.train, rng::derive(seed, "noise"))?;
        let raw = self.pipeline.evaluate(
            &corrupted.dataset,
            &self.test,
            &self.objective,
            rng::derive(seed, "pipeline"),
        )?;
        Ok(self.objective.normalize(raw))
    }

    fn clean(&self, seed: u64) -> Result<f64, OptimizerError> {
        let raw = self
            .pipeline
            .evaluate(&self.train, &self.test, &self.objective, rng::derive(seed, "pipeline"))?;
        Ok(self.objective.normalize(raw))
    }
}
