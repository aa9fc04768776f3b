//! End-to-end runs: configuration, orchestration and report files.
//!
//! Every random stream is derived from `search.seed`:
//! `split` shuffles the train/test partition, `evaluation` keys corruption
//! noise and pipeline randomness (shared by all candidates, so results
//! replay exactly), `tpe/<template key>` drives each template's tuning,
//! `warm/<template key>` the warm-start tuning, `sample` the search sample
//! and `random_baseline` the baseline draws.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corruption::{expected_fraction, project_to_budget, Dcp};
use crate::dataset::{load_csv_with, split, CsvOptions, DataError, Dataset, Schema};
use crate::metrics::Objective;
use crate::optimizer::{
    beam_search, evaluate_clean, evaluate_dcp, random_baseline, sample_then_transfer, warm_start,
    ErrorClass, EvalRecord, OptimizerError, PipelineEvaluator, SearchConfig, SearchOutcome,
};
use crate::pipeline::{Cleaner, ExternalPipeline, ExternalSpec, Pipeline, PipelineSpec};
use crate::rng;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot read config {path}: {message}")]
    ConfigRead { path: String, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("stage '{stage}': {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: OptimizerError,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
}

fn stage<T, E: Into<OptimizerError>>(name: &'static str, r: Result<T, E>) -> Result<T, RunError> {
    r.map_err(|e| RunError::Stage {
        stage: name,
        source: e.into(),
    })
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_missing_token() -> String {
    CsvOptions::default().missing_token
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// CSV file; relative paths resolve against the config file.
    pub dataset: PathBuf,
    /// Schema JSON file.
    pub schema: PathBuf,
    #[serde(default = "default_missing_token")]
    pub missing_token: String,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    pub error: ErrorClass,
    pub objective: Objective,
    pub search: SearchConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<ExternalSpec>,
    /// Cheap pipeline searched first; its optimum warm-starts tuning on
    /// the target pipeline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy: Option<PipelineSpec>,
    /// Search on this fraction of the training rows, then evaluate the
    /// winner on all of them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_fraction: Option<f64>,
    pub output_dir: PathBuf,
    /// Budgets at which the best process is re-projected and evaluated;
    /// defaults to 25, 50, 75 and 100 % of `search.budget`.
    #[serde(default)]
    pub budget_sweep: Option<Vec<f64>>,
    /// Trials of the random baseline included in the report (0 = skip).
    #[serde(default)]
    pub random_baseline_trials: usize,
}

impl RunConfig {
    pub fn from_str(text: &str, is_json: bool) -> Result<Self, RunError> {
        let parsed = if is_json {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        };
        parsed.map_err(|message| RunError::ConfigRead {
            path: "<inline>".into(),
            message,
        })
    }

    /// Reads TOML or JSON (by extension, `.json` = JSON) and resolves
    /// relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(|e| RunError::ConfigRead {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg = Self::from_str(&text, is_json).map_err(|e| match e {
            RunError::ConfigRead { message, .. } => RunError::ConfigRead {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dataset, &mut cfg.schema, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: &str| Err(RunError::Config(m.to_string()));
        match (&self.pipeline, &self.external) {
            (Some(_), Some(_)) => return bad("set exactly one of 'pipeline' and 'external', not both"),
            (None, None) => return bad("set one of 'pipeline' or 'external'"),
            _ => {}
        }
        if let Some(ext) = &self.external {
            if ext.command.is_empty() {
                return bad("external.command is empty");
            }
        }
        if self.proxy.is_some() {
            let expensive = self.external.is_some()
                || matches!(&self.pipeline, Some(p) if matches!(p.cleaner, Cleaner::KnnImpute { .. }));
            if !expensive {
                return bad("a proxy needs an external or knn_impute target pipeline");
            }
            if self.sample_fraction.is_some() {
                return bad("'proxy' and 'sample_fraction' are mutually exclusive");
            }
        }
        if let Some(f) = self.sample_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return bad("sample_fraction must lie in (0, 1]");
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        if let Some(s) = &self.budget_sweep {
            if s.iter().any(|b| !(0.0..=1.0).contains(b)) {
                return bad("budget_sweep values must lie in [0, 1]");
            }
        }
        stage("config", self.search.validate())
    }

    fn sweep(&self) -> Vec<f64> {
        self.budget_sweep
            .clone()
            .unwrap_or_else(|| [0.25, 0.5, 0.75, 1.0].iter().map(|f| f * self.search.budget).collect())
    }

    pub fn target_pipeline(&self) -> Arc<dyn Pipeline + Send> {
        match (&self.pipeline, &self.external) {
            (Some(p), _) => Arc::new(p.clone()),
            (None, Some(e)) => Arc::new(ExternalPipeline::new(e.clone())),
            (None, None) => unreachable!("validated"),
        }
    }
}

/// Loaded data and the target evaluator for a config.
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub evaluator: PipelineEvaluator,
    pub eval_seed: u64,
}

pub fn prepare(config: &RunConfig) -> Result<Prepared, RunError> {
    config.validate()?;
    let schema = Schema::load(&config.schema)?;
    let options = CsvOptions {
        missing_token: config.missing_token.clone(),
    };
    let data = load_csv_with(&config.dataset, &schema, &options)?;
    let parts = split(&data, config.train_fraction, rng::derive(config.search.seed, "split"))?;
    if let Some(p) = &config.pipeline {
        p.validate(schema.task(), &config.objective)
            .map_err(|e| RunError::Config(e.to_string()))?;
    }
    let evaluator = PipelineEvaluator::new(
        parts.train.clone(),
        parts.test.clone(),
        config.target_pipeline(),
        config.objective.clone(),
    );
    Ok(Prepared {
        train: parts.train,
        test: parts.test,
        evaluator,
        eval_seed: rng::derive(config.search.seed, "evaluation"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthPoint {
    pub depth: usize,
    pub best_psi: f64,
    pub candidates: usize,
    pub evaluations: usize,
    pub beam: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetPoint {
    pub budget: f64,
    pub psi: f64,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub trials: usize,
    pub psi: f64,
    pub metric: f64,
    pub best_dcp: Dcp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSummary {
    pub sample_rows: usize,
    pub psi_sample: f64,
    pub psi_full: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStartSummary {
    pub proxy: String,
    pub proxy_psi: f64,
    pub proxy_evaluations: usize,
    pub target_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Effective configuration with every default filled in.
    pub config: RunConfig,
    pub pipeline: String,
    pub mode: String,
    pub train_rows: usize,
    pub test_rows: usize,
    pub clean_psi: f64,
    pub clean_metric: f64,
    pub adversarial_psi: f64,
    pub adversarial_metric: f64,
    pub expected_fraction: f64,
    pub best_dcp: Dcp,
    pub trajectory: Vec<DepthPoint>,
    pub evaluations: usize,
    pub budget_sweep: Vec<BudgetPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_baseline: Option<BaselineSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer: Option<TransferSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<WarmStartSummary>,
    /// Wall-clock seconds per stage plus `total`.
    pub timings: BTreeMap<String, f64>,
}

/// One trace line: the stage that produced the evaluation plus the record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceLine {
    pub stage: String,
    #[serde(flatten)]
    pub record: EvalRecord,
}

struct Clock {
    started: Instant,
    stages: BTreeMap<String, f64>,
}

impl Clock {
    fn new() -> Self {
        Self {
            started: Instant::now(),
            stages: BTreeMap::new(),
        }
    }

    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        *self.stages.entry(name.to_string()).or_default() += t.elapsed().as_secs_f64();
        out
    }
}

fn trajectory(search: &SearchOutcome) -> Vec<DepthPoint> {
    search
        .trace
        .iter()
        .map(|d| DepthPoint {
            depth: d.depth,
            best_psi: d.best_psi,
            candidates: d.candidates,
            evaluations: d.evaluations,
            beam: d.beam.clone(),
        })
        .collect()
}

/// Executes the clean baseline, the configured search mode, the budget
/// sweep and the optional random baseline, and writes the output files.
pub fn run(config: &RunConfig) -> Result<RunReport, RunError> {
    let mut clock = Clock::new();
    let prepared = clock.time("load", || prepare(config))?;
    let ev = &prepared.evaluator;
    let search_cfg = &config.search;
    let objective = &config.objective;

    let clean_psi = clock.time("clean_baseline", || {
        stage("clean_baseline", evaluate_clean(ev, prepared.eval_seed, search_cfg.repeats))
    })?;
    log::info!("clean {} = {}", objective.name, objective.denormalize(clean_psi));

    let mut trace: Vec<TraceLine> = Vec::new();
    let push = |trace: &mut Vec<TraceLine>, stage: &str, records: &[EvalRecord]| {
        trace.extend(records.iter().map(|r| TraceLine {
            stage: stage.to_string(),
            record: r.clone(),
        }));
    };

    let (mode, best, psi, traj, transfer, warm) = if let Some(proxy_spec) = &config.proxy {
        let proxy_ev = PipelineEvaluator::new(
            prepared.train.clone(),
            prepared.test.clone(),
            Arc::new(proxy_spec.clone()),
            objective.clone(),
        );
        let search = clock.time("dependency_search", || {
            stage("dependency_search", beam_search(&proxy_ev, &config.error, search_cfg))
        })?;
        push(&mut trace, "proxy_search", &search.records);
        let warm = clock.time("finetuning", || stage("finetuning", warm_start(&search, ev, search_cfg)))?;
        push(&mut trace, "finetuning", &warm.records);
        let summary = WarmStartSummary {
            proxy: proxy_spec.describe(),
            proxy_psi: search.psi,
            proxy_evaluations: search.evaluations(),
            target_evaluations: warm.records.len(),
        };
        ("warm_start", warm.best, warm.psi, trajectory(&search), None, Some(summary))
    } else if let Some(fraction) = config.sample_fraction {
        let (outcome, search) = clock.time("dependency_search", || {
            stage(
                "dependency_search",
                sample_then_transfer(ev, |s| ev.with_train(s), fraction, &config.error, search_cfg),
            )
        })?;
        push(&mut trace, "sample_search", &search.records);
        let summary = TransferSummary {
            sample_rows: outcome.sample_rows,
            psi_sample: outcome.psi_sample,
            psi_full: outcome.psi_full,
        };
        (
            "sample_then_transfer",
            outcome.best,
            outcome.psi_full,
            trajectory(&search),
            Some(summary),
            None,
        )
    } else {
        let search = clock.time("dependency_search", || {
            stage("dependency_search", beam_search(ev, &config.error, search_cfg))
        })?;
        push(&mut trace, "search", &search.records);
        ("beam_search", search.best.clone(), search.psi, trajectory(&search), None, None)
    };
    let expected = stage("report", expected_fraction(&best, &prepared.train))?;

    let budget_sweep = clock.time("budget_sweep", || -> Result<Vec<BudgetPoint>, RunError> {
        config
            .sweep()
            .into_iter()
            .map(|b| {
                let dcp = stage("budget_sweep", project_to_budget(&best, &prepared.train, b))?;
                let v = stage(
                    "budget_sweep",
                    evaluate_dcp(ev, &dcp, prepared.eval_seed, search_cfg.repeats),
                )?;
                Ok(BudgetPoint {
                    budget: b,
                    psi: v,
                    metric: objective.denormalize(v),
                })
            })
            .collect()
    })?;

    let baseline = if config.random_baseline_trials > 0 {
        let r = clock.time("random_baseline", || {
            stage(
                "random_baseline",
                random_baseline(ev, &config.error, search_cfg, config.random_baseline_trials),
            )
        })?;
        push(&mut trace, "random_baseline", &r.records);
        Some(BaselineSummary {
            trials: config.random_baseline_trials,
            psi: r.psi,
            metric: objective.denormalize(r.psi),
            best_dcp: r.best,
        })
    } else {
        None
    };

    let evaluations = trace.len();
    let mut report = RunReport {
        config: config.clone(),
        pipeline: ev.pipeline.describe(),
        mode: mode.to_string(),
        train_rows: prepared.train.n_rows(),
        test_rows: prepared.test.n_rows(),
        clean_psi,
        clean_metric: objective.denormalize(clean_psi),
        adversarial_psi: psi,
        adversarial_metric: objective.denormalize(psi),
        expected_fraction: expected,
        best_dcp: best,
        trajectory: traj,
        evaluations,
        budget_sweep,
        random_baseline: baseline,
        transfer,
        warm_start: warm,
        timings: BTreeMap::new(),
    };
    clock.time("write_outputs", || write_outputs(&report, &trace))?;
    report.timings = clock.stages.clone();
    report.timings.insert("total".into(), clock.started.elapsed().as_secs_f64());
    // rewrite so the report carries the final timings
    write_json(&config.output_dir.join("report.json"), &report)?;
    Ok(report)
}

fn out_err(path: &Path, e: impl ToString) -> RunError {
    RunError::Output {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| out_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| out_err(path, e))
}

fn write_outputs(report: &RunReport, trace: &[TraceLine]) -> Result<(), RunError> {
    let dir = &report.config.output_dir;
    fs::create_dir_all(dir).map_err(|e| out_err(dir, e))?;
    write_json(&dir.join("report.json"), report)?;
    let dcp_path = dir.join("best_dcp.json");
    fs::write(&dcp_path, report.best_dcp.to_json() + "\n").map_err(|e| out_err(&dcp_path, e))?;

    let trace_path = dir.join("trace.jsonl");
    let mut f = fs::File::create(&trace_path).map_err(|e| out_err(&trace_path, e))?;
    for line in trace {
        let text = serde_json::to_string(line).map_err(|e| out_err(&trace_path, e))?;
        writeln!(f, "{text}").map_err(|e| out_err(&trace_path, e))?;
    }

    let plot_path = dir.join("plotdata.csv");
    let mut w = csv::Writer::from_path(&plot_path).map_err(|e| out_err(&plot_path, e))?;
    w.write_record(["series", "x", "psi"]).map_err(|e| out_err(&plot_path, e))?;
    for d in &report.trajectory {
        w.write_record(["depth".to_string(), d.depth.to_string(), d.best_psi.to_string()])
            .map_err(|e| out_err(&plot_path, e))?;
    }
    for b in &report.budget_sweep {
        w.write_record(["budget".to_string(), b.budget.to_string(), b.psi.to_string()])
            .map_err(|e| out_err(&plot_path, e))?;
    }
    w.flush().map_err(|e| out_err(&plot_path, e))
}

/// Re-evaluates a serialized process under the config's seed.
pub fn replay(config: &RunConfig, dcp: &Dcp) -> Result<f64, RunError> {
    let prepared = prepare(config)?;
    stage(
        "replay",
        evaluate_dcp(&prepared.evaluator, dcp, prepared.eval_seed, config.search.repeats),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub clean_psi: f64,
    pub clean_metric: f64,
    pub baseline: BaselineSummary,
}

/// Clean evaluation plus the random baseline with `trials` draws.
pub fn baseline(config: &RunConfig, trials: usize) -> Result<BaselineReport, RunError> {
    let prepared = prepare(config)?;
    let ev = &prepared.evaluator;
    let clean_psi = stage("clean_baseline", evaluate_clean(ev, prepared.eval_seed, config.search.repeats))?;
    let r = stage("random_baseline", random_baseline(ev, &config.error, &config.search, trials))?;
    let report = BaselineReport {
        clean_psi,
        clean_metric: config.objective.denormalize(clean_psi),
        baseline: BaselineSummary {
            trials,
            psi: r.psi,
            metric: config.objective.denormalize(r.psi),
            best_dcp: r.best,
        },
    };
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| out_err(dir, e))?;
    write_json(&dir.join("baseline.json"), &report)?;
    Ok(report)
}

/// Objective value of `pipeline` trained on the `train` CSV and scored
/// on the `test` CSV. Backs the `worker` command.
pub fn evaluate_files(
    pipeline: &PipelineSpec,
    train: &Path,
    test: &Path,
    schema: &Path,
    objective: &Objective,
    seed: u64,
) -> Result<f64, RunError> {
    let schema = Schema::load(schema)?;
    let options = CsvOptions::default();
    let parts = crate::dataset::unify_levels(&[
        load_csv_with(train, &schema, &options)?,
        load_csv_with(test, &schema, &options)?,
    ])?;
    stage("worker", pipeline.evaluate(&parts[0], &parts[1], objective, seed))
}
