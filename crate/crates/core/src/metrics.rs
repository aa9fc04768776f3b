//! Objective functions: AUC, F1, MSE, statistical parity difference, equal
//! opportunity difference and prediction-interval coverage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("AUC needs both classes present")]
    SingleClass,
    #[error("a sensitive group is empty")]
    EmptyGroup,
    #[error("a sensitive group has no positive-label rows")]
    NoPositives,
    #[error("non-finite score")]
    NonFinite,
    #[error("unknown metric '{0}'")]
    Unknown(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricName {
    Auc,
    F1,
    Mse,
    Spd,
    Eo,
    Coverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

impl MetricName {
    pub const ALL: [MetricName; 6] = [
        MetricName::Auc,
        MetricName::F1,
        MetricName::Mse,
        MetricName::Spd,
        MetricName::Eo,
        MetricName::Coverage,
    ];

    pub fn direction(self) -> Direction {
        match self {
            MetricName::Auc | MetricName::F1 | MetricName::Coverage => Direction::HigherIsBetter,
            MetricName::Mse | MetricName::Spd | MetricName::Eo => Direction::LowerIsBetter,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Auc => "auc",
            MetricName::F1 => "f1",
            MetricName::Mse => "mse",
            MetricName::Spd => "spd",
            MetricName::Eo => "eo",
            MetricName::Coverage => "coverage",
        }
    }

    pub fn needs_groups(self) -> bool {
        matches!(self, MetricName::Spd | MetricName::Eo)
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricName {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricName::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| MetricError::Unknown(s.to_string()))
    }
}

fn default_threshold() -> f64 {
    0.5
}

/// Metric plus the settings needed to compute it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub name: MetricName,
    /// Score cut-off for F1/SPD/EO binarization.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Privileged value of the schema's sensitive attribute (SPD/EO).
    #[serde(default)]
    pub privileged: Option<String>,
}

impl Objective {
    pub fn new(name: MetricName) -> Self {
        Self {
            name,
            threshold: default_threshold(),
            privileged: None,
        }
    }

    pub fn with_privileged(mut self, value: &str) -> Self {
        self.privileged = Some(value.to_string());
        self
    }

    pub fn direction(&self) -> Direction {
        self.name.direction()
    }

    /// Maps a raw metric value to the quantity the search minimizes; lower
    /// means more damage.
    pub fn normalize(&self, raw: f64) -> f64 {
        match self.direction() {
            Direction::HigherIsBetter => raw,
            Direction::LowerIsBetter => -raw,
        }
    }

    pub fn denormalize(&self, psi: f64) -> f64 {
        self.normalize(psi)
    }
}

fn check_len(a: usize, b: usize) -> Result<(), MetricError> {
    if a != b {
        Err(MetricError::LengthMismatch(a, b))
    } else {
        Ok(())
    }
}

/// Mann–Whitney AUC; tied positive/negative pairs count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check_len(scores.len(), labels.len())?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Walk tie groups in ascending score order; each positive earns the
    // negatives strictly below plus half of the tied negatives.
    let mut credit = 0.0f64;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group = &order[i..j];
        let pos = group.iter().filter(|&&k| labels[k]).count();
        let neg = group.len() - pos;
        credit += pos as f64 * (neg_below as f64 + 0.5 * neg as f64);
        neg_below += neg;
        i = j;
    }
    Ok(credit / (n_pos as f64 * n_neg as f64))
}

/// F1 of the positive class; 0/0 is scored 0.
pub fn f1(predictions: &[bool], labels: &[bool]) -> Result<f64, MetricError> {
    check_len(predictions.len(), labels.len())?;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    Ok(if tp == 0 || denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    })
}

fn positive_rate<'a>(preds: impl Iterator<Item = &'a bool>) -> Option<f64> {
    let (mut n, mut k) = (0usize, 0usize);
    for &p in preds {
        n += 1;
        k += p as usize;
    }
    (n > 0).then(|| k as f64 / n as f64)
}

/// `|P(pred = 1 | privileged) - P(pred = 1 | unprivileged)|`.
pub fn spd(predictions: &[bool], privileged: &[bool]) -> Result<f64, MetricError> {
    check_len(predictions.len(), privileged.len())?;
    let rate = |flag: bool| {
        positive_rate(
            predictions
                .iter()
                .zip(privileged)
                .filter(move |(_, &g)| g == flag)
                .map(|(p, _)| p),
        )
        .ok_or(MetricError::EmptyGroup)
    };
    Ok((rate(true)? - rate(false)?).abs())
}

/// Equal opportunity difference: `|TPR_privileged - TPR_unprivileged|`.
pub fn eo(predictions: &[bool], labels: &[bool], privileged: &[bool]) -> Result<f64, MetricError> {
    check_len(predictions.len(), labels.len())?;
    check_len(predictions.len(), privileged.len())?;
    let tpr = |flag: bool| {
        positive_rate(
            predictions
                .iter()
                .zip(labels)
                .zip(privileged)
                .filter(move |((_, &l), &g)| l && g == flag)
                .map(|((p, _), _)| p),
        )
        .ok_or(MetricError::NoPositives)
    };
    Ok((tpr(true)? - tpr(false)?).abs())
}

pub fn mse(predictions: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    check_len(predictions.len(), labels.len())?;
    if predictions.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / predictions.len() as f64)
}

/// Fraction of labels inside their closed interval.
pub fn coverage(intervals: &[(f64, f64)], labels: &[f64]) -> Result<f64, MetricError> {
    check_len(intervals.len(), labels.len())?;
    if labels.is_empty() {
        return Err(MetricError::Empty);
    }
    let inside = intervals
        .iter()
        .zip(labels)
        .filter(|((lo, hi), y)| *lo <= **y && **y <= *hi)
        .count();
    Ok(inside as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        credit += 1.0;
                    } else if scores[i] == scores[j] {
                        credit += 0.5;
                    }
                }
            }
        }
        credit / pairs
    }

    #[test]
    fn auc_examples() {
        let labels = [false, false, true, true];
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &labels).unwrap(), 0.75);
        assert_eq!(auc(&[0.1, 0.2, 0.3, 0.4], &labels).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 4], &labels).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.2], &[true, true]), Err(MetricError::SingleClass));
        assert!(auc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn f1_examples() {
        let l = [true, false, true, false];
        assert_eq!(f1(&l, &l).unwrap(), 1.0);
        // TP=1, FP=1, FN=1
        assert_eq!(
            f1(&[true, true, false], &[true, false, true]).unwrap(),
            0.5
        );
        assert_eq!(f1(&[false, false], &[true, false]).unwrap(), 0.0);
        assert_eq!(f1(&[false, false], &[false, false]).unwrap(), 0.0);
    }

    #[test]
    fn spd_examples() {
        let g = [true, true, false, false];
        assert_eq!(spd(&[true, false, true, false], &g).unwrap(), 0.0);
        assert_eq!(spd(&[true; 4], &g).unwrap(), 0.0);
        // 0.8 vs 0.3 needs ten rows per group
        let groups: Vec<bool> = (0..20).map(|i| i < 10).collect();
        let mut preds: Vec<bool> = (0..10).map(|i| i < 8).collect();
        preds.extend((0..10).map(|i| i < 3));
        assert!((spd(&preds, &groups).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(spd(&[true], &[true]), Err(MetricError::EmptyGroup));
    }

    #[test]
    fn eo_examples() {
        let labels = [true, true, true, true, false];
        let groups = [true, true, false, false, false];
        assert_eq!(eo(&labels, &labels, &groups).unwrap(), 0.0);
        let preds = [true, true, true, false, false];
        assert_eq!(eo(&preds, &labels, &groups).unwrap(), 0.5);
        let same = [true, false, true, false, true];
        assert_eq!(eo(&same, &labels, &groups).unwrap(), 0.0);
        assert_eq!(
            eo(&[true, true], &[true, false], &[true, false]),
            Err(MetricError::NoPositives)
        );
    }

    #[test]
    fn mse_and_coverage_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 5.0);
        assert_eq!(mse(&[1.0], &[3.0]).unwrap(), 4.0);
        assert_eq!(mse(&[], &[]), Err(MetricError::Empty));

        let labels: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let all: Vec<(f64, f64)> = labels.iter().map(|y| (y - 1.0, y + 1.0)).collect();
        assert_eq!(coverage(&all, &labels).unwrap(), 1.0);
        let mut nine = all.clone();
        nine[3] = (100.0, 101.0);
        assert_eq!(coverage(&nine, &labels).unwrap(), 0.9);
        let point: Vec<(f64, f64)> = labels.iter().map(|&y| (y, y)).collect();
        assert_eq!(coverage(&point, &labels).unwrap(), 1.0);
        assert_eq!(coverage(&[], &[]), Err(MetricError::Empty));
    }

    #[test]
    fn normalization_direction() {
        assert_eq!(Objective::new(MetricName::Auc).normalize(0.8), 0.8);
        assert_eq!(Objective::new(MetricName::Spd).normalize(0.3), -0.3);
        assert_eq!("EO".parse::<MetricName>().unwrap(), MetricName::Eo);
        assert!("acc".parse::<MetricName>().is_err());
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..200).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..20).prop_map(|v| v as f64 / 4.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting((scores, labels) in instance()) {
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let fast = auc(&scores, &labels).unwrap();
            prop_assert!((fast - pair_oracle(&scores, &labels)).abs() < 1e-12);
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((fast + auc(&neg, &labels).unwrap() - 1.0).abs() < 1e-12);
            let warped: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() + 3.0).collect();
            prop_assert_eq!(auc(&warped, &labels).unwrap(), fast);
        }

        #[test]
        fn bounded_metrics(preds in prop::collection::vec(any::<bool>(), 1..50),
                           seed in any::<u64>()) {
            let n = preds.len();
            let labels: Vec<bool> = (0..n).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
            let f = f1(&preds, &labels).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
            let groups: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
            if let Ok(s) = spd(&preds, &groups) {
                prop_assert!((0.0..=1.0).contains(&s));
            }
            if let Ok(e) = eo(&preds, &labels, &groups) {
                prop_assert!((0.0..=1.0).contains(&e));
            }
            let x: Vec<f64> = preds.iter().map(|&p| p as u8 as f64).collect();
            prop_assert_eq!(mse(&x, &x).unwrap(), 0.0);
        }
    }
}
