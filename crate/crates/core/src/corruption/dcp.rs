//! Concrete corruption processes: application to a dataset, expected
//! corruption fraction and projection onto an error budget.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::pattern::{CompiledPattern, Pattern};
use super::template::{CorruptionTemplate, ErrorType, ParamValue, Theta};
use super::CorruptionError;
use crate::dataset::{Column, Dataset, MISSING_CODE};
use crate::rng::uniform_noise;

/// Noise stream id used for the selection node.
pub const SELECTION_NOISE_ID: u64 = u64::MAX;

/// A template with every parameter bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dcp {
    pub template: CorruptionTemplate,
    pub theta: Theta,
    pub pattern: Pattern,
    /// Corruption probability; a tuple is corrupted iff it matches and its
    /// noise draw is `<= p`.
    pub p: f64,
    /// Sub-interval proportions of `[0, p]` per class, for multi-class
    /// label errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_weights: Option<Vec<f64>>,
}

impl Dcp {
    pub fn error_type(&self) -> &ErrorType {
        &self.template.error_type
    }

    /// Same process with a different corruption probability; keeps `theta`
    /// in sync.
    pub fn with_probability(&self, p: f64) -> Dcp {
        let mut out = self.clone();
        out.p = p;
        out.theta[0] = ParamValue::Real(p);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dcp serializes")
    }

    /// Parses a serialized process and checks that its pattern and
    /// probability agree with re-instantiating the template.
    pub fn from_json(text: &str) -> Result<Dcp, CorruptionError> {
        let dcp: Dcp =
            serde_json::from_str(text).map_err(|e| CorruptionError::Json(e.to_string()))?;
        let rebuilt = dcp.template.instantiate(&dcp.theta)?;
        if rebuilt.pattern != dcp.pattern
            || rebuilt.p.to_bits() != dcp.p.to_bits()
            || rebuilt.class_weights != dcp.class_weights
        {
            return Err(CorruptionError::Inconsistent(
                "pattern/probability do not match template and theta".into(),
            ));
        }
        Ok(dcp)
    }

    pub fn apply(&self, dataset: &Dataset, seed: u64) -> Result<CorruptedDataset, CorruptionError> {
        apply(self, dataset, seed)
    }
}

/// Result of applying one or more processes.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedDataset {
    pub dataset: Dataset,
    /// Source row indices that survived selection, in order.
    pub kept_indices: Vec<usize>,
    /// (source row, column) cells whose value changed.
    pub corrupted_cells: Vec<(usize, usize)>,
    pub source_rows: usize,
}

impl CorruptedDataset {
    /// Number of source tuples that differ from their clean version
    /// (dropped or with at least one altered cell).
    pub fn affected_rows(&self) -> usize {
        let dropped = self.source_rows - self.kept_indices.len();
        let altered: BTreeSet<usize> = self.corrupted_cells.iter().map(|&(r, _)| r).collect();
        dropped + altered.len()
    }

    pub fn corrupted_fraction(&self) -> f64 {
        if self.source_rows == 0 {
            0.0
        } else {
            self.affected_rows() as f64 / self.source_rows as f64
        }
    }
}

enum Action {
    Drop,
    SetMissing(usize),
    Flip { column: usize, a: u32, b: u32 },
    Assign { column: usize, codes: Vec<u32>, cumulative: Vec<f64> },
}

/// One process bound to a dataset's columns.
pub(crate) struct Step {
    pattern: CompiledPattern,
    action: Action,
    p: f64,
    noise_id: u64,
}

impl Step {
    pub(crate) fn prepare(dcp: &Dcp, dataset: &Dataset) -> Result<Step, CorruptionError> {
        let schema = dataset.schema();
        dcp.error_type().validate(schema)?;
        let pattern = dcp.pattern.compile(dataset)?;
        let (action, noise_id) = match dcp.error_type() {
            ErrorType::SelectionBias => (Action::Drop, SELECTION_NOISE_ID),
            ErrorType::MissingValue { target } => {
                let col = schema.require(target).map_err(|_| {
                    CorruptionError::UnknownAttribute(target.clone())
                })?;
                (Action::SetMissing(col), col as u64)
            }
            ErrorType::LabelError { classes } => {
                let col = schema.label_index();
                let column = dataset.column(col);
                let code = |c: &String| column.code_of(c).unwrap_or(MISSING_CODE);
                let action = match &dcp.class_weights {
                    None => {
                        if classes.len() != 2 {
                            return Err(CorruptionError::Classes(
                                "label flipping needs exactly two classes".into(),
                            ));
                        }
                        Action::Flip {
                            column: col,
                            a: code(&classes[0]),
                            b: code(&classes[1]),
                        }
                    }
                    Some(weights) => {
                        if weights.len() != classes.len() {
                            return Err(CorruptionError::Classes(
                                "one weight per class required".into(),
                            ));
                        }
                        let mut acc = 0.0;
                        let mut cumulative: Vec<f64> = weights
                            .iter()
                            .map(|w| {
                                acc += w;
                                acc
                            })
                            .collect();
                        if let Some(last) = cumulative.last_mut() {
                            *last = 1.0;
                        }
                        Action::Assign {
                            column: col,
                            codes: classes.iter().map(code).collect(),
                            cumulative,
                        }
                    }
                };
                (action, col as u64)
            }
        };
        Ok(Step {
            pattern,
            action,
            p: dcp.p,
            noise_id,
        })
    }

    pub(crate) fn read_corrupted(&mut self, columns: &[usize]) {
        self.pattern.read_corrupted(columns);
    }

    /// Applies this step to every live row of `working`, reading pattern
    /// inputs from `clean` unless marked otherwise.
    pub(crate) fn run(
        &self,
        clean: &Dataset,
        working: &mut Dataset,
        alive: &mut [bool],
        seed: u64,
        cells: &mut Vec<(usize, usize)>,
    ) {
        if self.p <= 0.0 {
            return;
        }
        for row in 0..working.n_rows() {
            if !alive[row] || !self.pattern.matches_split(clean, working, row) {
                continue;
            }
            let noise = uniform_noise(seed, row as u64, self.noise_id);
            if noise > self.p {
                continue;
            }
            match &self.action {
                Action::Drop => alive[row] = false,
                Action::SetMissing(col) => {
                    if !working.is_missing(row, *col) {
                        working.column_mut(*col).set_missing(row);
                        cells.push((row, *col));
                    }
                }
                Action::Flip { column, a, b } => {
                    if let Column::Categorical { codes, .. } = working.column_mut(*column) {
                        let cur = codes[row];
                        let new = if cur == *a && *a != MISSING_CODE {
                            *b
                        } else if cur == *b && *b != MISSING_CODE {
                            *a
                        } else {
                            cur
                        };
                        if new != cur && new != MISSING_CODE {
                            codes[row] = new;
                            cells.push((row, *column));
                        }
                    }
                }
                Action::Assign {
                    column,
                    codes: targets,
                    cumulative,
                } => {
                    let u = noise / self.p;
                    let j = cumulative
                        .iter()
                        .position(|&c| u <= c)
                        .unwrap_or(cumulative.len() - 1);
                    if let Column::Categorical { codes, .. } = working.column_mut(*column) {
                        let new = targets[j];
                        if new != MISSING_CODE && codes[row] != MISSING_CODE && codes[row] != new {
                            codes[row] = new;
                            cells.push((row, *column));
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn finish(
    working: Dataset,
    alive: &[bool],
    mut cells: Vec<(usize, usize)>,
) -> CorruptedDataset {
    let source_rows = working.n_rows();
    let kept: Vec<usize> = (0..source_rows).filter(|&r| alive[r]).collect();
    cells.retain(|&(r, _)| alive[r]);
    cells.sort_unstable();
    let dataset = if kept.len() == source_rows {
        working
    } else {
        working.select_rows(&kept)
    };
    CorruptedDataset {
        dataset,
        kept_indices: kept,
        corrupted_cells: cells,
        source_rows,
    }
}

/// Applies `dcp` to `dataset` with noise keyed by `seed`.
pub fn apply(dcp: &Dcp, dataset: &Dataset, seed: u64) -> Result<CorruptedDataset, CorruptionError> {
    let step = Step::prepare(dcp, dataset)?;
    let mut working = dataset.clone();
    let mut alive = vec![true; dataset.n_rows()];
    let mut cells = Vec::new();
    step.run(dataset, &mut working, &mut alive, seed, &mut cells);
    Ok(finish(working, &alive, cells))
}

#[inline]
fn fraction(p: f64, matched: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        p * matched as f64 / n as f64
    }
}

/// Number of rows of `dataset` satisfying the process pattern.
pub fn matching_rows(dcp: &Dcp, dataset: &Dataset) -> Result<usize, CorruptionError> {
    Ok(dcp.pattern.compile(dataset)?.count_matches(dataset))
}

/// Exact expected fraction of tuples the process corrupts: `p * |match| / N`.
pub fn expected_fraction(dcp: &Dcp, dataset: &Dataset) -> Result<f64, CorruptionError> {
    Ok(fraction(dcp.p, matching_rows(dcp, dataset)?, dataset.n_rows()))
}

/// Scales `p` down so the expected corrupted fraction does not exceed
/// `budget`. A budget of zero forces `p = 0`.
pub fn project_to_budget(
    dcp: &Dcp,
    dataset: &Dataset,
    budget: f64,
) -> Result<Dcp, CorruptionError> {
    if !(0.0..=1.0).contains(&budget) {
        return Err(CorruptionError::Budget(budget));
    }
    let n = dataset.n_rows();
    let matched = matching_rows(dcp, dataset)?;
    if fraction(dcp.p, matched, n) <= budget {
        return Ok(dcp.clone());
    }
    let mut p = (budget * n as f64 / matched as f64).clamp(0.0, 1.0);
    while p > 0.0 && fraction(p, matched, n) > budget {
        p = p.next_down();
    }
    Ok(dcp.with_probability(p))
}
