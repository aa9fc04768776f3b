//! Corruption templates: an error type, the attributes its pattern may
//! condition on, and the box-shaped parameter space the optimizer searches.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::pattern::{Pattern, RangeCondition};
use super::{CorruptionError, Dcp};
use crate::dataset::{AttributeKind, Column, Dataset, Schema};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ErrorType {
    /// Target cells become MISSING.
    MissingValue { target: String },
    /// Labels are flipped (two classes) or redistributed over `classes`.
    LabelError { classes: Vec<String> },
    /// Tuples are excluded from the dataset.
    SelectionBias,
}

impl ErrorType {
    pub fn short_name(&self) -> &'static str {
        match self {
            ErrorType::MissingValue { .. } => "mv",
            ErrorType::LabelError { .. } => "le",
            ErrorType::SelectionBias => "sb",
        }
    }

    /// Name of the corrupted node this error writes to.
    pub fn output_node(&self, schema: &Schema) -> String {
        match self {
            ErrorType::MissingValue { target } => target.clone(),
            ErrorType::LabelError { .. } => schema.label.clone(),
            ErrorType::SelectionBias => "S".to_string(),
        }
    }

    pub(crate) fn validate(&self, schema: &Schema) -> Result<(), CorruptionError> {
        match self {
            ErrorType::MissingValue { target } => {
                schema
                    .index_of(target)
                    .ok_or_else(|| CorruptionError::UnknownAttribute(target.clone()))?;
            }
            ErrorType::LabelError { classes } => {
                if schema.kind(schema.label_index()) != AttributeKind::Categorical {
                    return Err(CorruptionError::LabelNotCategorical);
                }
                if classes.len() < 2 {
                    return Err(CorruptionError::Classes(
                        "label errors need at least two classes".into(),
                    ));
                }
            }
            ErrorType::SelectionBias => {}
        }
        Ok(())
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorType::MissingValue { target } => write!(f, "mv({target})"),
            other => f.write_str(other.short_name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Real { low: f64, high: f64 },
    Choice { options: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub domain: Domain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamValue {
    Real(f64),
    Choice(usize),
}

impl ParamValue {
    pub fn as_real(self) -> Option<f64> {
        match self {
            ParamValue::Real(v) => Some(v),
            ParamValue::Choice(_) => None,
        }
    }
}

/// Binding for every dimension of a parameter space, in dimension order.
pub type Theta = Vec<ParamValue>;

/// Product of real intervals and finite choice sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    pub dimensions: Vec<Dimension>,
}

impl ParameterSpace {
    pub fn len(&self) -> usize {
        self.dimensions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dimensions.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.dimensions.iter().position(|d| d.name == name)
    }

    pub fn contains(&self, theta: &Theta) -> Result<(), CorruptionError> {
        if theta.len() != self.dimensions.len() {
            return Err(CorruptionError::ThetaLength {
                expected: self.dimensions.len(),
                found: theta.len(),
            });
        }
        for (dim, value) in self.dimensions.iter().zip(theta) {
            let ok = match (&dim.domain, value) {
                (Domain::Real { low, high }, ParamValue::Real(v)) => {
                    v.is_finite() && *low <= *v && *v <= *high
                }
                (Domain::Choice { options }, ParamValue::Choice(i)) => *i < options.len(),
                _ => false,
            };
            if !ok {
                if dim.name.ends_with(".width") && matches!(value, ParamValue::Real(v) if *v < 0.0)
                {
                    return Err(CorruptionError::NegativeWidth(
                        dim.name.trim_end_matches(".width").to_string(),
                    ));
                }
                return Err(CorruptionError::ThetaOutOfSpace {
                    dimension: dim.name.clone(),
                    value: format!("{value:?}"),
                });
            }
        }
        Ok(())
    }
}

pub const PROBABILITY: &str = "p";

/// Parametric family of corruption functions over a fixed attribute set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionTemplate {
    pub error_type: ErrorType,
    /// Pattern attributes in schema order.
    pub pattern_attributes: Vec<String>,
    pub parameter_space: ParameterSpace,
}

impl CorruptionTemplate {
    /// Derives the parameter box from the observed values in `dataset`:
    /// `p` in [0, 1]; per numeric attribute `lower` in [min, max] and
    /// `width` in [0, max - min]; per categorical attribute one choice per
    /// observed level; per class a sub-interval weight for multi-class
    /// label errors.
    pub fn new(
        error_type: ErrorType,
        attributes: &[String],
        dataset: &Dataset,
    ) -> Result<Self, CorruptionError> {
        let schema = dataset.schema();
        error_type.validate(schema)?;
        if attributes.is_empty() {
            return Err(CorruptionError::EmptyPattern);
        }
        let mut cols = Vec::with_capacity(attributes.len());
        for a in attributes {
            let c = schema
                .index_of(a)
                .ok_or_else(|| CorruptionError::UnknownAttribute(a.clone()))?;
            if !cols.contains(&c) {
                cols.push(c);
            }
        }
        cols.sort_unstable();

        let mut dims = vec![Dimension {
            name: PROBABILITY.into(),
            domain: Domain::Real {
                low: 0.0,
                high: 1.0,
            },
        }];
        for &c in &cols {
            let name = &schema.attributes[c].name;
            match dataset.column(c) {
                Column::Numeric(v) => {
                    let (lo, hi) = v
                        .iter()
                        .filter(|x| !x.is_nan())
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                            (lo.min(x), hi.max(x))
                        });
                    if lo > hi {
                        return Err(CorruptionError::Degenerate(name.clone()));
                    }
                    dims.push(Dimension {
                        name: format!("{name}.lower"),
                        domain: Domain::Real { low: lo, high: hi },
                    });
                    dims.push(Dimension {
                        name: format!("{name}.width"),
                        domain: Domain::Real {
                            low: 0.0,
                            high: hi - lo,
                        },
                    });
                }
                Column::Categorical { levels, codes } => {
                    let mut seen = vec![false; levels.len()];
                    for &code in codes {
                        if let Some(s) = seen.get_mut(code as usize) {
                            *s = true;
                        }
                    }
                    let options: Vec<String> = levels
                        .iter()
                        .zip(&seen)
                        .filter(|(_, &s)| s)
                        .map(|(l, _)| l.clone())
                        .collect();
                    if options.is_empty() {
                        return Err(CorruptionError::Degenerate(name.clone()));
                    }
                    dims.push(Dimension {
                        name: name.clone(),
                        domain: Domain::Choice { options },
                    });
                }
            }
        }
        if let ErrorType::LabelError { classes } = &error_type {
            if classes.len() > 2 {
                for class in classes {
                    dims.push(Dimension {
                        name: format!("w.{class}"),
                        domain: Domain::Real {
                            low: 0.0,
                            high: 1.0,
                        },
                    });
                }
            }
        }
        Ok(Self {
            error_type,
            pattern_attributes: cols
                .iter()
                .map(|&c| schema.attributes[c].name.clone())
                .collect(),
            parameter_space: ParameterSpace { dimensions: dims },
        })
    }

    /// Template with an explicitly supplied parameter space.
    pub fn with_space(
        error_type: ErrorType,
        pattern_attributes: Vec<String>,
        parameter_space: ParameterSpace,
    ) -> Result<Self, CorruptionError> {
        if pattern_attributes.is_empty() {
            return Err(CorruptionError::EmptyPattern);
        }
        let t = Self {
            error_type,
            pattern_attributes,
            parameter_space,
        };
        if t.parameter_space.index_of(PROBABILITY) != Some(0) {
            return Err(CorruptionError::Inconsistent(
                "first dimension must be the corruption probability 'p'".into(),
            ));
        }
        for a in &t.pattern_attributes {
            let has = t.parameter_space.index_of(a).is_some()
                || (t.parameter_space.index_of(&format!("{a}.lower")).is_some()
                    && t.parameter_space.index_of(&format!("{a}.width")).is_some());
            if !has {
                return Err(CorruptionError::Inconsistent(format!(
                    "no bound parameters for pattern attribute '{a}'"
                )));
            }
        }
        Ok(t)
    }

    /// Stable identifier: error type plus sorted attribute set.
    pub fn key(&self) -> String {
        let mut attrs = self.pattern_attributes.clone();
        attrs.sort();
        format!("{}|{}", self.error_type, attrs.join(","))
    }

    pub fn contains_attribute(&self, name: &str) -> bool {
        self.pattern_attributes.iter().any(|a| a == name)
    }

    /// Binds `theta` into a concrete process.
    pub fn instantiate(&self, theta: &Theta) -> Result<Dcp, CorruptionError> {
        let space = &self.parameter_space;
        space.contains(theta)?;
        let p = theta[0].as_real().expect("p is real");
        let mut conditions = Vec::with_capacity(self.pattern_attributes.len());
        for a in &self.pattern_attributes {
            if let Some(i) = space.index_of(a) {
                let Domain::Choice { options } = &space.dimensions[i].domain else {
                    return Err(CorruptionError::Inconsistent(format!(
                        "dimension '{a}' must be a choice"
                    )));
                };
                let ParamValue::Choice(k) = theta[i] else {
                    unreachable!("checked by contains")
                };
                conditions.push(RangeCondition::equals(a, &options[k]));
            } else {
                let lo_i = space.index_of(&format!("{a}.lower")).expect("validated");
                let w_i = space.index_of(&format!("{a}.width")).expect("validated");
                let lower = theta[lo_i].as_real().expect("real");
                let width = theta[w_i].as_real().expect("real");
                if width < 0.0 {
                    return Err(CorruptionError::NegativeWidth(a.clone()));
                }
                conditions.push(RangeCondition::range(a, Some(lower), Some(lower + width)));
            }
        }
        let class_weights = match &self.error_type {
            ErrorType::LabelError { classes } if classes.len() > 2 => {
                let raw: Vec<f64> = classes
                    .iter()
                    .map(|c| {
                        space
                            .index_of(&format!("w.{c}"))
                            .and_then(|i| theta[i].as_real())
                            .ok_or_else(|| {
                                CorruptionError::Inconsistent(format!("no weight for class '{c}'"))
                            })
                    })
                    .collect::<Result<_, _>>()?;
                Some(normalize_weights(&raw))
            }
            _ => None,
        };
        Ok(Dcp {
            template: self.clone(),
            theta: theta.clone(),
            pattern: Pattern::new(conditions)?,
            p,
            class_weights,
        })
    }

    /// Theta with `p = 0` and every other dimension at its lower end / first choice.
    pub fn zero_theta(&self) -> Theta {
        let mut theta: Theta = self
            .parameter_space
            .dimensions
            .iter()
            .map(|d| match &d.domain {
                Domain::Real { low, .. } => ParamValue::Real(*low),
                Domain::Choice { .. } => ParamValue::Choice(0),
            })
            .collect();
        theta[0] = ParamValue::Real(0.0);
        theta
    }
}

/// Normalizes non-negative weights to sum to one; all-zero becomes uniform.
pub fn normalize_weights(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().map(|w| w.max(0.0)).sum();
    if total > 0.0 {
        raw.iter().map(|w| w.max(0.0) / total).collect()
    } else {
        vec![1.0 / raw.len() as f64; raw.len()]
    }
}

impl fmt::Display for CorruptionTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} on {{{}}}",
            self.error_type,
            self.pattern_attributes.join(", ")
        )
    }
}
