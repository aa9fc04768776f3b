//! Conjunctive range patterns selecting the subpopulation to corrupt.

use serde::{Deserialize, Serialize};

use super::CorruptionError;
use crate::dataset::{AttributeKind, Column, Dataset, MISSING_CODE};

/// Bound on a single attribute. Numeric attributes take an optionally
/// one-sided closed range; categorical attributes take an equality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Bound {
    Range {
        #[serde(default)]
        lower: Option<f64>,
        #[serde(default)]
        upper: Option<f64>,
    },
    Equals {
        value: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeCondition {
    pub attribute: String,
    #[serde(flatten)]
    pub bound: Bound,
}

impl RangeCondition {
    pub fn range(attribute: &str, lower: Option<f64>, upper: Option<f64>) -> Self {
        Self {
            attribute: attribute.to_string(),
            bound: Bound::Range { lower, upper },
        }
    }

    pub fn equals(attribute: &str, value: &str) -> Self {
        Self {
            attribute: attribute.to_string(),
            bound: Bound::Equals {
                value: value.to_string(),
            },
        }
    }
}

/// Conjunction of per-attribute conditions, at most one per attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    pub conditions: Vec<RangeCondition>,
}

impl Pattern {
    pub fn new(conditions: Vec<RangeCondition>) -> Result<Self, CorruptionError> {
        if conditions.is_empty() {
            return Err(CorruptionError::EmptyPattern);
        }
        for (i, c) in conditions.iter().enumerate() {
            if conditions[..i].iter().any(|d| d.attribute == c.attribute) {
                return Err(CorruptionError::InvalidCondition {
                    attribute: c.attribute.clone(),
                    reason: "more than one condition on the attribute".into(),
                });
            }
            if let Bound::Range {
                lower: Some(lo),
                upper: Some(hi),
            } = c.bound
            {
                if !(lo <= hi) {
                    return Err(CorruptionError::InvalidCondition {
                        attribute: c.attribute.clone(),
                        reason: format!("lower {lo} exceeds upper {hi}"),
                    });
                }
            }
        }
        Ok(Self { conditions })
    }

    pub fn attributes(&self) -> impl Iterator<Item = &str> {
        self.conditions.iter().map(|c| c.attribute.as_str())
    }

    /// Resolves attribute names and categorical tokens against `dataset`.
    pub fn compile(&self, dataset: &Dataset) -> Result<CompiledPattern, CorruptionError> {
        let schema = dataset.schema();
        let mut conds = Vec::with_capacity(self.conditions.len());
        for c in &self.conditions {
            let col = schema
                .index_of(&c.attribute)
                .ok_or_else(|| CorruptionError::UnknownAttribute(c.attribute.clone()))?;
            let test = match (&c.bound, schema.kind(col)) {
                (Bound::Range { lower, upper }, AttributeKind::Numeric) => Test::Numeric {
                    lower: lower.unwrap_or(f64::NEG_INFINITY),
                    upper: upper.unwrap_or(f64::INFINITY),
                },
                (Bound::Equals { value }, AttributeKind::Categorical) => {
                    Test::Code(dataset.column(col).code_of(value))
                }
                (_, kind) => {
                    return Err(CorruptionError::InvalidCondition {
                        attribute: c.attribute.clone(),
                        reason: format!("condition type does not fit a {kind:?} attribute"),
                    })
                }
            };
            conds.push(CompiledCondition {
                column: col,
                test,
                reads_corrupted: false,
            });
        }
        Ok(CompiledPattern { conds })
    }

    /// Evaluates the pattern on row `row` of `dataset`.
    pub fn matches(&self, dataset: &Dataset, row: usize) -> Result<bool, CorruptionError> {
        Ok(self.compile(dataset)?.matches(dataset, row))
    }
}

#[derive(Debug, Clone, Copy)]
enum Test {
    Numeric { lower: f64, upper: f64 },
    /// `None` when the token never occurs in the column dictionary.
    Code(Option<u32>),
}

#[derive(Debug, Clone)]
struct CompiledCondition {
    column: usize,
    test: Test,
    reads_corrupted: bool,
}

impl CompiledCondition {
    #[inline]
    fn holds(&self, column: &Column, row: usize) -> bool {
        match (self.test, column) {
            (Test::Numeric { lower, upper }, Column::Numeric(v)) => {
                let x = v[row];
                // NaN (MISSING) fails both comparisons
                lower <= x && x <= upper
            }
            (Test::Code(Some(code)), Column::Categorical { codes, .. }) => {
                codes[row] == code && code != MISSING_CODE
            }
            _ => false,
        }
    }
}

/// Pattern bound to column indices of a particular schema.
#[derive(Debug, Clone)]
pub struct CompiledPattern {
    conds: Vec<CompiledCondition>,
}

impl CompiledPattern {
    #[inline]
    pub fn matches(&self, dataset: &Dataset, row: usize) -> bool {
        self.conds
            .iter()
            .all(|c| c.holds(dataset.column(c.column), row))
    }

    /// Marks the listed columns as read from the corrupted working copy
    /// instead of the clean source.
    pub(crate) fn read_corrupted(&mut self, columns: &[usize]) {
        for c in &mut self.conds {
            c.reads_corrupted = columns.contains(&c.column);
        }
    }

    #[inline]
    pub(crate) fn matches_split(&self, clean: &Dataset, working: &Dataset, row: usize) -> bool {
        self.conds.iter().all(|c| {
            let source = if c.reads_corrupted { working } else { clean };
            c.holds(source.column(c.column), row)
        })
    }

    pub fn count_matches(&self, dataset: &Dataset) -> usize {
        (0..dataset.n_rows())
            .filter(|&r| self.matches(dataset, r))
            .count()
    }
}
