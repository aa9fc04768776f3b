//! Built-in ML pipelines (cleaner + model) and the external-process
//! pipeline, behind one [`Pipeline`] trait that maps a train/test pair to a
//! raw metric value.
//!
//! Classification is binary: the schema's positive label against the rest.
//! All fitted statistics come from the training partition only.

mod conformal;
pub mod external;
mod features;
mod logistic;
mod tree;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Column, Dataset, Task, MISSING_CODE};
use crate::metrics::{self, MetricError, MetricName, Objective};
use crate::rng;

pub use conformal::{conformal_quantile, ridge_fit, ConformalModel};
pub use external::{ExternalPipeline, ExternalSpec};
pub use features::Preprocessor;
pub use logistic::LogisticModel;
pub use tree::TreeModel;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no training rows left after dropping {dropped} incomplete rows")]
    NoTrainingRows { dropped: usize },
    #[error("test partition has no rows with an observed label")]
    NoTestRows,
    #[error("model '{model}' does not support a {task:?} task")]
    TaskMismatch { model: &'static str, task: Task },
    #[error("metric '{metric}' cannot be computed by model '{model}'")]
    UnsupportedMetric { metric: MetricName, model: &'static str },
    #[error("metric '{0}' needs a sensitive attribute in the schema")]
    NoSensitiveAttribute(MetricName),
    #[error("metric '{0}' needs the privileged value of the sensitive attribute")]
    NoPrivilegedValue(MetricName),
    #[error("calibration split needs at least 2 rows, got {0}")]
    CalibrationTooSmall(usize),
    #[error("invalid pipeline setting: {0}")]
    Invalid(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("could not launch '{command}': {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("external pipeline exited with {status}; stderr tail: {stderr}")]
    NonZeroExit { status: String, stderr: String },
    #[error("external pipeline exceeded the {0} s timeout")]
    Timeout(u64),
    #[error("external pipeline output is not a single JSON object: {0}")]
    InvalidOutput(String),
    #[error("external pipeline output lacks metric '{0}'")]
    MissingMetric(String),
    #[error("metric '{0}' in external output is not a finite number")]
    IllTypedMetric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Missing-value handling applied before the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cleaner {
    /// Drop training rows with a missing feature; test gaps get the
    /// training mean or mode.
    None,
    MeanImpute,
    MedianImpute,
    KnnImpute {
        #[serde(default = "default_k")]
        k: usize,
    },
}

fn default_k() -> usize {
    5
}

impl Cleaner {
    pub fn name(&self) -> &'static str {
        match self {
            Cleaner::None => "none",
            Cleaner::MeanImpute => "mean_impute",
            Cleaner::MedianImpute => "median_impute",
            Cleaner::KnnImpute { .. } => "knn_impute",
        }
    }
}

fn default_l2() -> f64 {
    1e-4
}
fn default_lr() -> f64 {
    0.1
}
fn default_iters() -> usize {
    500
}
fn default_depth() -> usize {
    5
}
fn default_min_leaf() -> usize {
    5
}
fn default_alpha() -> f64 {
    0.1
}
fn default_cal() -> f64 {
    0.5
}
fn default_ridge() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    LogisticRegression {
        #[serde(default = "default_l2")]
        l2: f64,
        #[serde(default = "default_lr")]
        learning_rate: f64,
        #[serde(default = "default_iters")]
        iterations: usize,
    },
    DecisionTree {
        #[serde(default = "default_depth")]
        max_depth: usize,
        #[serde(default = "default_min_leaf")]
        min_leaf: usize,
    },
    SplitConformal {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_cal")]
        calibration_fraction: f64,
        #[serde(default = "default_ridge")]
        ridge: f64,
    },
}

impl ModelSpec {
    pub fn logistic() -> Self {
        ModelSpec::LogisticRegression {
            l2: default_l2(),
            learning_rate: default_lr(),
            iterations: default_iters(),
        }
    }

    pub fn tree() -> Self {
        ModelSpec::DecisionTree {
            max_depth: default_depth(),
            min_leaf: default_min_leaf(),
        }
    }

    pub fn conformal(alpha: f64) -> Self {
        ModelSpec::SplitConformal {
            alpha,
            calibration_fraction: default_cal(),
            ridge: default_ridge(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::LogisticRegression { .. } => "logistic_regression",
            ModelSpec::DecisionTree { .. } => "decision_tree",
            ModelSpec::SplitConformal { .. } => "split_conformal",
        }
    }

    fn task(&self) -> Task {
        match self {
            ModelSpec::SplitConformal { .. } => Task::Regression,
            _ => Task::Classification,
        }
    }
}

/// Anything that trains on `train` and scores `objective` on `test`.
pub trait Pipeline: Sync {
    /// Raw (unnormalized) metric value.
    fn evaluate(
        &self,
        train: &Dataset,
        test: &Dataset,
        objective: &Objective,
        seed: u64,
    ) -> Result<f64, PipelineError>;

    fn describe(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub cleaner: Cleaner,
    pub model: ModelSpec,
}

impl PipelineSpec {
    pub fn new(cleaner: Cleaner, model: ModelSpec) -> Self {
        Self { cleaner, model }
    }

    pub fn validate(&self, task: Task, objective: &Objective) -> Result<(), PipelineError> {
        if self.model.task() != task {
            return Err(PipelineError::TaskMismatch {
                model: self.model.name(),
                task,
            });
        }
        let ok = match task {
            Task::Classification => !matches!(objective.name, MetricName::Mse | MetricName::Coverage),
            Task::Regression => matches!(objective.name, MetricName::Mse | MetricName::Coverage),
        };
        if !ok {
            return Err(PipelineError::UnsupportedMetric {
                metric: objective.name,
                model: self.model.name(),
            });
        }
        match &self.model {
            ModelSpec::SplitConformal {
                alpha,
                calibration_fraction,
                ..
            } => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return Err(PipelineError::Invalid(format!("alpha must lie in (0, 1), got {alpha}")));
                }
                if !(*calibration_fraction > 0.0 && *calibration_fraction < 1.0) {
                    return Err(PipelineError::Invalid(format!(
                        "calibration_fraction must lie in (0, 1), got {calibration_fraction}"
                    )));
                }
            }
            ModelSpec::DecisionTree { max_depth, .. } if *max_depth == 0 => {
                return Err(PipelineError::Invalid("max_depth must be positive".into()));
            }
            _ => {}
        }
        if let Cleaner::KnnImpute { k: 0 } = self.cleaner {
            return Err(PipelineError::Invalid("knn k must be positive".into()));
        }
        Ok(())
    }

    /// Fits cleaner and model on `train`. `seed` drives the calibration
    /// split of the conformal model; the other models are deterministic.
    pub fn fit(&self, train: &Dataset, seed: u64) -> Result<FittedPipeline, PipelineError> {
        let schema = train.schema();
        let label = schema.label_index();
        let features = schema.feature_indices();

        let labelled: Vec<usize> = (0..train.n_rows()).filter(|&r| !train.is_missing(r, label)).collect();
        let mut dropped = train.n_rows() - labelled.len();
        let rows: Vec<usize> = if self.cleaner == Cleaner::None {
            labelled
                .into_iter()
                .filter(|&r| features.iter().all(|&c| !train.is_missing(r, c)))
                .collect()
        } else {
            labelled
        };
        dropped = dropped.max(train.n_rows() - rows.len());
        if rows.is_empty() {
            return Err(PipelineError::NoTrainingRows { dropped });
        }
        let data = train.select_rows(&rows);
        let pre = Preprocessor::fit(&self.cleaner, &data, &features);
        let x = pre.transform(&data, true);
        let width = pre.width();

        let model = match &self.model {
            ModelSpec::SplitConformal {
                alpha,
                calibration_fraction,
                ridge,
            } => {
                let y = numeric_labels(&data);
                let n = y.len();
                if n < 2 {
                    return Err(PipelineError::CalibrationTooSmall(n));
                }
                let n_cal = ((calibration_fraction * n as f64).round() as usize).clamp(1, n - 1);
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(&mut rng::rng_for(rng::derive(seed, "calibration")));
                let (cal, proper) = idx.split_at(n_cal);
                let gather = |ids: &[usize]| -> (Vec<f64>, Vec<f64>) {
                    let mut xs = Vec::with_capacity(ids.len() * width);
                    let mut ys = Vec::with_capacity(ids.len());
                    for &i in ids {
                        xs.extend_from_slice(&x[i * width..(i + 1) * width]);
                        ys.push(y[i]);
                    }
                    (xs, ys)
                };
                let (xp, yp) = gather(proper);
                let coefficients = ridge_fit(&xp, &yp, width, *ridge);
                let mut model = ConformalModel {
                    coefficients,
                    alpha: *alpha,
                    quantile: 0.0,
                    calibration_size: cal.len(),
                };
                let residuals: Vec<f64> = cal
                    .iter()
                    .map(|&i| (y[i] - model.predict(&x[i * width..(i + 1) * width])).abs())
                    .collect();
                model.quantile = conformal_quantile(&residuals, *alpha);
                Model::Conformal(model)
            }
            spec => {
                let y = binary_labels(&data);
                let pos = y.iter().sum::<f64>();
                if pos == 0.0 || pos == y.len() as f64 {
                    log::debug!("single-class training data; using a constant scorer");
                    Model::Constant(pos / y.len() as f64)
                } else {
                    match spec {
                        ModelSpec::LogisticRegression {
                            l2,
                            learning_rate,
                            iterations,
                        } => Model::Logistic(LogisticModel::fit(&x, &y, width, *l2, *learning_rate, *iterations)),
                        ModelSpec::DecisionTree { max_depth, min_leaf } => {
                            Model::Tree(TreeModel::fit(&x, &y, width, *max_depth, *min_leaf))
                        }
                        ModelSpec::SplitConformal { .. } => unreachable!(),
                    }
                }
            }
        };
        Ok(FittedPipeline {
            preprocessor: pre,
            model,
            dropped_rows: dropped,
        })
    }
}

impl Pipeline for PipelineSpec {
    fn evaluate(
        &self,
        train: &Dataset,
        test: &Dataset,
        objective: &Objective,
        seed: u64,
    ) -> Result<f64, PipelineError> {
        self.validate(train.schema().task(), objective)?;
        self.fit(train, seed)?.score(test, objective)
    }

    fn describe(&self) -> String {
        format!("{} + {}", self.cleaner.name(), self.model.name())
    }
}

#[derive(Debug, Clone)]
pub enum Model {
    Logistic(LogisticModel),
    Tree(TreeModel),
    Conformal(ConformalModel),
    /// Fallback for single-class training data.
    Constant(f64),
}

#[derive(Debug, Clone)]
pub struct FittedPipeline {
    pub preprocessor: Preprocessor,
    pub model: Model,
    /// Training rows removed for a missing label or, with no cleaner, a
    /// missing feature.
    pub dropped_rows: usize,
}

impl FittedPipeline {
    pub fn is_constant(&self) -> bool {
        matches!(self.model, Model::Constant(_))
    }

    /// Point predictions: positive-class scores or regression values.
    pub fn predict(&self, data: &Dataset) -> Vec<f64> {
        let x = self.preprocessor.transform(data, false);
        let w = self.preprocessor.width();
        (0..data.n_rows())
            .map(|r| {
                let row = &x[r * w..(r + 1) * w];
                match &self.model {
                    Model::Logistic(m) => m.predict(row),
                    Model::Tree(m) => m.predict(row),
                    Model::Conformal(m) => m.predict(row),
                    Model::Constant(c) => *c,
                }
            })
            .collect()
    }

    pub fn intervals(&self, data: &Dataset) -> Option<Vec<(f64, f64)>> {
        let Model::Conformal(m) = &self.model else {
            return None;
        };
        Some(self.predict(data).into_iter().map(|y| (y - m.quantile, y + m.quantile)).collect())
    }

    /// Raw metric on the labelled rows of `test`.
    pub fn score(&self, test: &Dataset, objective: &Objective) -> Result<f64, PipelineError> {
        let schema = test.schema();
        let label = schema.label_index();
        let rows: Vec<usize> = (0..test.n_rows()).filter(|&r| !test.is_missing(r, label)).collect();
        if rows.is_empty() {
            return Err(PipelineError::NoTestRows);
        }
        let test = test.select_rows(&rows);
        let preds = self.predict(&test);
        match objective.name {
            MetricName::Auc => Ok(metrics::auc(&preds, &bool_labels(&test))?),
            MetricName::F1 => Ok(metrics::f1(&threshold(&preds, objective.threshold), &bool_labels(&test))?),
            MetricName::Spd => Ok(metrics::spd(
                &threshold(&preds, objective.threshold),
                &privileged_flags(&test, objective)?,
            )?),
            MetricName::Eo => Ok(metrics::eo(
                &threshold(&preds, objective.threshold),
                &bool_labels(&test),
                &privileged_flags(&test, objective)?,
            )?),
            MetricName::Mse => Ok(metrics::mse(&preds, &numeric_labels(&test))?),
            MetricName::Coverage => {
                let intervals = self.intervals(&test).ok_or(PipelineError::UnsupportedMetric {
                    metric: MetricName::Coverage,
                    model: "point predictor",
                })?;
                Ok(metrics::coverage(&intervals, &numeric_labels(&test))?)
            }
        }
    }
}

fn threshold(scores: &[f64], t: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= t).collect()
}

/// Code of the positive class: the schema's choice or else the
/// lexicographically greatest level.
pub fn positive_code(data: &Dataset) -> Option<u32> {
    let schema = data.schema();
    let col = data.column(schema.label_index());
    match &schema.positive_label {
        Some(p) => col.code_of(p),
        None => col.levels().and_then(|l| l.len().checked_sub(1)).map(|c| c as u32),
    }
}

fn bool_labels(data: &Dataset) -> Vec<bool> {
    let pos = positive_code(data);
    match data.column(data.schema().label_index()) {
        Column::Categorical { codes, .. } => codes.iter().map(|&c| c != MISSING_CODE && Some(c) == pos).collect(),
        Column::Numeric(_) => unreachable!("classification label is categorical"),
    }
}

fn binary_labels(data: &Dataset) -> Vec<f64> {
    bool_labels(data).into_iter().map(|b| b as u8 as f64).collect()
}

fn numeric_labels(data: &Dataset) -> Vec<f64> {
    match data.column(data.schema().label_index()) {
        Column::Numeric(v) => v.clone(),
        Column::Categorical { .. } => unreachable!("regression label is numeric"),
    }
}

fn privileged_flags(data: &Dataset, objective: &Objective) -> Result<Vec<bool>, PipelineError> {
    let schema = data.schema();
    let idx = schema
        .sensitive_index()
        .ok_or(PipelineError::NoSensitiveAttribute(objective.name))?;
    let value = objective
        .privileged
        .as_deref()
        .ok_or(PipelineError::NoPrivilegedValue(objective.name))?;
    Ok(match data.column(idx) {
        Column::Categorical { codes, .. } => {
            let code = data.column(idx).code_of(value);
            codes.iter().map(|&c| Some(c) == code).collect()
        }
        Column::Numeric(v) => {
            let t: f64 = value
                .parse()
                .map_err(|_| PipelineError::Invalid(format!("privileged value '{value}' is not numeric")))?;
            v.iter().map(|&x| x == t).collect()
        }
    })
}
