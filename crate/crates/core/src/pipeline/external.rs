//! Black-box pipelines run as a child process.
//!
//! Each call writes `train.csv`, `test.csv` and `schema.json` into a fresh
//! temporary directory and runs the command with
//! `--train <path> --test <path> --schema <path>` appended (or substituted
//! for `{train}`, `{test}`, `{schema}` placeholders if the arguments contain
//! any). The child must print exactly one JSON object on stdout; its stderr
//! is forwarded to the log.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Pipeline, PipelineError};
use crate::dataset::Dataset;
use crate::metrics::Objective;

fn default_timeout() -> u64 {
    600
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalSpec {
    /// Executable followed by its arguments.
    pub command: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Key of the metric in the child's JSON output; defaults to the
    /// objective name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_key: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ExternalPipeline {
    pub spec: ExternalSpec,
}

const STDERR_TAIL: usize = 20;

impl ExternalPipeline {
    pub fn new(spec: ExternalSpec) -> Self {
        Self { spec }
    }

    fn arguments(&self, train: &Path, test: &Path, schema: &Path) -> Vec<String> {
        let args = &self.spec.command[1..];
        let templated = args
            .iter()
            .any(|a| a.contains("{train}") || a.contains("{test}") || a.contains("{schema}"));
        let (tr, te, sc) = (
            train.display().to_string(),
            test.display().to_string(),
            schema.display().to_string(),
        );
        if templated {
            args.iter()
                .map(|a| a.replace("{train}", &tr).replace("{test}", &te).replace("{schema}", &sc))
                .collect()
        } else {
            let mut out = args.to_vec();
            out.extend(["--train".into(), tr, "--test".into(), te, "--schema".into(), sc]);
            out
        }
    }

    /// Runs the child and returns its parsed JSON object.
    pub fn run(&self, train: &Dataset, test: &Dataset) -> Result<serde_json::Map<String, serde_json::Value>, PipelineError> {
        let program = self
            .spec
            .command
            .first()
            .ok_or_else(|| PipelineError::Invalid("external command is empty".into()))?;
        let dir = tempfile::tempdir().map_err(|e| PipelineError::Io(e.to_string()))?;
        let train_path = dir.path().join("train.csv");
        let test_path = dir.path().join("test.csv");
        let schema_path = dir.path().join("schema.json");
        let io = |e: crate::dataset::DataError| PipelineError::Io(e.to_string());
        train.write_csv(&train_path).map_err(io)?;
        test.write_csv(&test_path).map_err(io)?;
        std::fs::write(&schema_path, train.schema().to_json()).map_err(|e| PipelineError::Io(e.to_string()))?;

        let mut child = Command::new(program)
            .args(self.arguments(&train_path, &test_path, &schema_path))
            .current_dir(dir.path())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| PipelineError::Spawn {
                command: program.clone(),
                source,
            })?;

        let mut stdout = child.stdout.take().expect("piped stdout");
        let stderr = child.stderr.take().expect("piped stderr");
        let out_reader = thread::spawn(move || {
            let mut buf = String::new();
            let _ = stdout.read_to_string(&mut buf);
            buf
        });
        let name = program.clone();
        let err_reader = thread::spawn(move || {
            let mut tail: Vec<String> = Vec::new();
            for line in BufReader::new(stderr).lines().map_while(Result::ok) {
                log::info!("[{name}] {line}");
                tail.push(line);
                if tail.len() > STDERR_TAIL {
                    tail.remove(0);
                }
            }
            tail.join("\n")
        });

        let deadline = Instant::now() + Duration::from_secs(self.spec.timeout_secs);
        let status = loop {
            match child.try_wait().map_err(|e| PipelineError::Io(e.to_string()))? {
                Some(status) => break status,
                None if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(PipelineError::Timeout(self.spec.timeout_secs));
                }
                None => thread::sleep(Duration::from_millis(10)),
            }
        };
        let out = out_reader.join().unwrap_or_default();
        let err_tail = err_reader.join().unwrap_or_default();
        if !status.success() {
            return Err(PipelineError::NonZeroExit {
                status: status.to_string(),
                stderr: err_tail,
            });
        }
        parse_output(&out)
    }
}

/// Exactly one JSON object, optionally surrounded by whitespace.
pub fn parse_output(stdout: &str) -> Result<serde_json::Map<String, serde_json::Value>, PipelineError> {
    let mut stream = serde_json::Deserializer::from_str(stdout).into_iter::<serde_json::Value>();
    let first = match stream.next() {
        Some(Ok(v)) => v,
        Some(Err(e)) => return Err(PipelineError::InvalidOutput(e.to_string())),
        None => return Err(PipelineError::InvalidOutput("empty stdout".into())),
    };
    if stream.next().is_some() {
        return Err(PipelineError::InvalidOutput("more than one JSON value".into()));
    }
    match first {
        serde_json::Value::Object(map) => Ok(map),
        other => Err(PipelineError::InvalidOutput(format!("expected an object, got {other}"))),
    }
}

/// Finite numeric value under `key`.
pub fn extract_metric(map: &serde_json::Map<String, serde_json::Value>, key: &str) -> Result<f64, PipelineError> {
    let v = map.get(key).ok_or_else(|| PipelineError::MissingMetric(key.to_string()))?;
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| PipelineError::IllTypedMetric(key.to_string()))
}

impl Pipeline for ExternalPipeline {
    fn evaluate(&self, train: &Dataset, test: &Dataset, objective: &Objective, _seed: u64) -> Result<f64, PipelineError> {
        let map = self.run(train, test)?;
        let key = self.spec.metric_key.as_deref().unwrap_or(objective.name.as_str());
        extract_metric(&map, key)
    }

    fn describe(&self) -> String {
        format!("external: {}", self.spec.command.join(" "))
    }
}
