use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use stress_core::corruption::Dcp;
use stress_core::metrics::{MetricName, Objective};
use stress_core::pipeline::{Cleaner, ModelSpec, PipelineSpec};
use stress_core::run::{self, RunConfig};
use stress_core::synthetic;

#[derive(Parser)]
#[command(name = "stress", version, about = "Search for the data corruption that most degrades an ML pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured search and write report.json, trace.jsonl,
    /// best_dcp.json and plotdata.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads for candidate evaluation.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Re-evaluate a serialized process instead of searching.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Evaluate the random-corruption baseline.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Train a built-in pipeline on --train and print its metric on
    /// --test as one JSON object (external-pipeline protocol).
    Worker {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// Pipeline spec file (TOML, or JSON with a .json extension);
        /// defaults to mean imputation + logistic regression.
        #[arg(long)]
        pipeline: Option<PathBuf>,
        #[arg(long, default_value = "auc")]
        metric: String,
        /// Privileged value of the sensitive attribute (spd, eo).
        #[arg(long)]
        privileged: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a seeded synthetic dataset as data.csv plus schema.json.
    Generate {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 5000)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    /// Census-income-like classification, label `income`.
    Adult,
    /// All-categorical classification driven by `segment`.
    Planted,
    /// Linear regression, label `y`.
    Regression,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| e.to_string())
}

fn load_pipeline(path: &PathBuf) -> Result<PipelineSpec, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    }
}

fn execute(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run { config, jobs, replay } => {
            let cfg = RunConfig::load(&config).map_err(|e| e.to_string())?;
            match replay {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                    let dcp = Dcp::from_json(&text).map_err(|e| e.to_string())?;
                    let psi = pool(jobs)?
                        .install(|| run::replay(&cfg, &dcp))
                        .map_err(|e| e.to_string())?;
                    let out = serde_json::json!({
                        "psi": psi,
                        "metric": cfg.objective.denormalize(psi),
                        "objective": cfg.objective.name.as_str(),
                    });
                    println!("{out}");
                }
                None => {
                    let report = pool(jobs)?.install(|| run::run(&cfg)).map_err(|e| e.to_string())?;
                    println!(
                        "clean {} = {:.6}; adversarial {} = {:.6}; best: {}",
                        cfg.objective.name,
                        report.clean_metric,
                        cfg.objective.name,
                        report.adversarial_metric,
                        report.best_dcp.template
                    );
                    println!("outputs written to {}", cfg.output_dir.display());
                }
            }
        }
        Command::Baseline { config, trials, jobs } => {
            let cfg = RunConfig::load(&config).map_err(|e| e.to_string())?;
            let report = pool(jobs)?
                .install(|| run::baseline(&cfg, trials))
                .map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?);
        }
        Command::Worker {
            train,
            test,
            schema,
            pipeline,
            metric,
            privileged,
            seed,
        } => {
            let spec = match pipeline {
                Some(p) => load_pipeline(&p)?,
                None => PipelineSpec::new(Cleaner::MeanImpute, ModelSpec::logistic()),
            };
            let name: MetricName = metric.parse().map_err(|e: stress_core::metrics::MetricError| e.to_string())?;
            let mut objective = Objective::new(name);
            objective.privileged = privileged;
            let value = run::evaluate_files(&spec, &train, &test, &schema, &objective, seed)
                .map_err(|e| e.to_string())?;
            let mut out = serde_json::Map::new();
            out.insert(name.as_str().to_string(), serde_json::json!(value));
            println!("{}", serde_json::Value::Object(out));
        }
        Command::Generate { kind, rows, seed, out } => {
            let data = match kind {
                Kind::Adult => synthetic::adult_like(rows, seed),
                Kind::Planted => synthetic::planted(rows, seed),
                Kind::Regression => synthetic::regression(rows, 1.0, seed),
            };
            std::fs::create_dir_all(&out).map_err(|e| format!("{}: {e}", out.display()))?;
            data.write_csv(&out.join("data.csv")).map_err(|e| e.to_string())?;
            let schema_path = out.join("schema.json");
            std::fs::write(&schema_path, data.schema().to_json() + "\n")
                .map_err(|e| format!("{}: {e}", schema_path.display()))?;
            println!("wrote {} rows to {}", data.n_rows(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
