//! Beam search over the attribute sets corruption patterns condition on.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tpe::tpe_run;
use super::{DcpEvaluator, ErrorClass, EvalRecord, OptimizerError, SearchConfig, IMPROVEMENT_TOLERANCE};
use crate::corruption::{CorruptionTemplate, Dcp, ErrorType};
use crate::dataset::{Column, Dataset, MISSING_CODE};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamEntry {
    pub template: CorruptionTemplate,
    pub best_dcp: Dcp,
    pub psi: f64,
    /// Depth at which the template was evaluated.
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthTrace {
    pub depth: usize,
    pub candidates: usize,
    pub evaluations: usize,
    /// `(template key, psi)` of the beam after merging this depth.
    pub beam: Vec<(String, f64)>,
    pub best_psi: f64,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: Dcp,
    pub psi: f64,
    pub beam: Vec<BeamEntry>,
    pub trace: Vec<DepthTrace>,
    pub records: Vec<EvalRecord>,
}

impl SearchOutcome {
    pub fn evaluations(&self) -> usize {
        self.records.len()
    }
}

/// Largest fraction of rows a pattern over `attributes` can match: the
/// biggest joint group of categorical values among rows with every
/// attribute observed (numeric ranges may cover their whole domain).
pub fn max_support(dataset: &Dataset, attributes: &[String]) -> f64 {
    let n = dataset.n_rows();
    if n == 0 {
        return 0.0;
    }
    let schema = dataset.schema();
    let cols: Vec<usize> = attributes.iter().filter_map(|a| schema.index_of(a)).collect();
    let mut groups: HashMap<Vec<u32>, usize> = HashMap::new();
    'rows: for r in 0..n {
        let mut key = Vec::new();
        for &c in &cols {
            match dataset.column(c) {
                Column::Numeric(v) => {
                    if v[r].is_nan() {
                        continue 'rows;
                    }
                }
                Column::Categorical { codes, .. } => {
                    if codes[r] == MISSING_CODE {
                        continue 'rows;
                    }
                    key.push(codes[r]);
                }
            }
        }
        *groups.entry(key).or_default() += 1;
    }
    groups.values().copied().max().unwrap_or(0) as f64 / n as f64
}

fn blocked(attrs: &[String], config: &SearchConfig) -> bool {
    config.blocklist.iter().any(|(a, b)| {
        a != b && attrs.iter().any(|x| x == a) && attrs.iter().any(|x| x == b)
    })
}

fn admissible(
    error: &ErrorType,
    attrs: &[String],
    dataset: &Dataset,
    config: &SearchConfig,
) -> Option<CorruptionTemplate> {
    if blocked(attrs, config) || max_support(dataset, attrs) < config.min_support {
        return None;
    }
    match CorruptionTemplate::new(error.clone(), attrs, dataset) {
        Ok(t) => Some(t),
        Err(e) => {
            log::debug!("skipping {error} on {attrs:?}: {e}");
            None
        }
    }
}

/// Initial templates. Selection bias starts from every single attribute;
/// label errors from the label alone and the label paired with each other
/// attribute; missing values from `{target, label}`.
pub fn determine_seeds(
    dataset: &Dataset,
    error_class: &ErrorClass,
    config: &SearchConfig,
) -> Result<Vec<CorruptionTemplate>, OptimizerError> {
    let schema = dataset.schema();
    let label = schema.label.clone();
    let mut out: Vec<CorruptionTemplate> = Vec::new();
    let mut keys = BTreeSet::new();
    for error in error_class.error_types(dataset)? {
        let sets: Vec<Vec<String>> = match &error {
            ErrorType::SelectionBias => schema.attributes.iter().map(|a| vec![a.name.clone()]).collect(),
            ErrorType::LabelError { .. } => std::iter::once(vec![label.clone()])
                .chain(
                    schema
                        .feature_indices()
                        .into_iter()
                        .map(|i| vec![schema.attributes[i].name.clone(), label.clone()]),
                )
                .collect(),
            ErrorType::MissingValue { target } => vec![vec![target.clone(), label.clone()]],
        };
        for attrs in sets {
            if let Some(t) = admissible(&error, &attrs, dataset, config) {
                if keys.insert(t.key()) {
                    out.push(t);
                }
            }
        }
    }
    if out.is_empty() {
        return Err(OptimizerError::NoSeeds(format!(
            "{error_class:?} over {} attributes",
            schema.attributes.len()
        )));
    }
    Ok(out)
}

/// Children of every beam entry with one more attribute, capped at
/// `max_pattern_attrs`, deduplicated and skipping keys in `exclude`.
pub fn expand(
    beam: &[BeamEntry],
    dataset: &Dataset,
    config: &SearchConfig,
    exclude: &BTreeSet<String>,
) -> Vec<CorruptionTemplate> {
    let schema = dataset.schema();
    let mut out = Vec::new();
    let mut keys = exclude.clone();
    for entry in beam {
        let t = &entry.template;
        if t.pattern_attributes.len() >= config.max_pattern_attrs {
            continue;
        }
        for a in &schema.attributes {
            if t.contains_attribute(&a.name) {
                continue;
            }
            let mut attrs = t.pattern_attributes.clone();
            attrs.push(a.name.clone());
            if let Some(child) = admissible(&t.error_type, &attrs, dataset, config) {
                if keys.insert(child.key()) {
                    out.push(child);
                }
            }
        }
    }
    out
}

fn beam_order(a: &BeamEntry, b: &BeamEntry) -> Ordering {
    let sorted = |t: &CorruptionTemplate| {
        let mut v = t.pattern_attributes.clone();
        v.sort();
        v
    };
    a.psi
        .total_cmp(&b.psi)
        .then(a.template.pattern_attributes.len().cmp(&b.template.pattern_attributes.len()))
        .then_with(|| sorted(&a.template).cmp(&sorted(&b.template)))
        .then_with(|| a.template.key().cmp(&b.template.key()))
}

/// Lowest psi first; ties go to the smaller pattern, then to the
/// lexicographically smaller attribute list.
pub fn sort_beam(entries: &mut [BeamEntry]) {
    entries.sort_by(beam_order);
}

/// Alternates template expansion with TPE tuning until the best psi stops
/// improving, the depth limit is hit, or no candidates remain.
pub fn beam_search(
    evaluator: &dyn DcpEvaluator,
    error_class: &ErrorClass,
    config: &SearchConfig,
) -> Result<SearchOutcome, OptimizerError> {
    config.validate()?;
    let data = evaluator.dataset();
    let settings = config.tpe_settings();
    let mut candidates = determine_seeds(data, error_class, config)?;
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut beam: Vec<BeamEntry> = Vec::new();
    let mut trace = Vec::new();
    let mut records = Vec::new();
    let mut previous = f64::INFINITY;

    for depth in 1..=config.max_depth {
        if candidates.is_empty() {
            break;
        }
        seen.extend(candidates.iter().map(|t| t.key()));
        let results: Vec<_> = candidates
            .par_iter()
            .map(|t| {
                let mut rng = rng::rng_for(rng::derive(config.seed, &format!("tpe/{}", t.key())));
                tpe_run(t, evaluator, config, &settings, &[], &mut rng, depth)
            })
            .collect();
        let mut evaluations = 0;
        for (t, r) in candidates.iter().zip(results) {
            let outcome = r?;
            evaluations += outcome.records.len();
            records.extend(outcome.records);
            if let Some(best_dcp) = outcome.best {
                beam.push(BeamEntry {
                    template: t.clone(),
                    best_dcp,
                    psi: outcome.psi,
                    depth,
                });
            }
        }
        sort_beam(&mut beam);
        beam.truncate(config.beam_width);
        let best = beam.first().map_or(f64::INFINITY, |e| e.psi);
        log::info!(
            "depth {depth}: {} candidates, best psi {best:.6}",
            candidates.len()
        );
        trace.push(DepthTrace {
            depth,
            candidates: candidates.len(),
            evaluations,
            beam: beam.iter().map(|e| (e.template.key(), e.psi)).collect(),
            best_psi: best,
        });
        if !(best < previous - IMPROVEMENT_TOLERANCE) {
            break;
        }
        previous = best;
        candidates = expand(&beam, data, config, &seen);
    }
    let top = beam.first().ok_or(OptimizerError::AllFailed)?;
    Ok(SearchOutcome {
        best: top.best_dcp.clone(),
        psi: top.psi,
        beam: beam.clone(),
        trace,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Attribute, Schema, Value};

    fn data() -> Dataset {
        let schema = Schema::new(
            vec![
                Attribute::categorical("work"),
                Attribute::numeric("age"),
                Attribute::categorical("gender"),
                Attribute::categorical("race"),
                Attribute::categorical("y"),
            ],
            "y",
            None,
            Some("1"),
        )
        .unwrap();
        let rows = (0..100)
            .map(|i| {
                vec![
                    Value::from(["a", "b", "c"][i % 3]),
                    Value::Num((i % 50) as f64),
                    Value::from(["f", "m"][i % 2]),
                    Value::from(["p", "q", "r", "s"][i % 4]),
                    Value::from(["0", "1"][(i / 2) % 2]),
                ]
            })
            .collect();
        Dataset::from_rows(schema, rows).unwrap()
    }

    fn names(ts: &[CorruptionTemplate]) -> Vec<Vec<String>> {
        ts.iter().map(|t| t.pattern_attributes.clone()).collect()
    }

    #[test]
    fn selection_bias_seeds_every_attribute() {
        let d = data();
        let c = SearchConfig::new(0.1, 0);
        let seeds = determine_seeds(&d, &ErrorClass::SelectionBias, &c).unwrap();
        assert_eq!(names(&seeds), vec![vec!["work"], vec!["age"], vec!["gender"], vec!["race"], vec!["y"]]);
    }

    #[test]
    fn missing_value_and_label_seeds_follow_heuristics() {
        let d = data();
        let c = SearchConfig::new(0.1, 0);
        let mv = determine_seeds(&d, &ErrorClass::MissingValue { target: Some("age".into()) }, &c).unwrap();
        assert!(mv.iter().all(|t| t.contains_attribute("age") && t.contains_attribute("y")));
        let auto = determine_seeds(&d, &ErrorClass::MissingValue { target: None }, &c).unwrap();
        assert_eq!(auto.len(), 4);
        let le = determine_seeds(&d, &ErrorClass::LabelError, &c).unwrap();
        assert!(le.iter().all(|t| t.contains_attribute("y")));
    }

    #[test]
    fn support_filter_and_blocklist() {
        let d = data();
        // work x race x gender: largest joint group is 100 / lcm(3, 4, 2) ≈ 9 rows
        let attrs: Vec<String> = ["work", "race", "gender"].iter().map(|s| s.to_string()).collect();
        let s = max_support(&d, &attrs);
        assert!((s - 0.09).abs() < 1e-12, "{s}");
        let mut c = SearchConfig::new(0.1, 0);
        c.min_support = 0.1;
        assert!(admissible(&ErrorType::SelectionBias, &attrs, &d, &c).is_none());
        c.min_support = 0.01;
        c.blocklist = vec![("race".into(), "work".into())];
        assert!(admissible(&ErrorType::SelectionBias, &attrs, &d, &c).is_none());
    }

    fn entry(d: &Dataset, attrs: &[&str], psi: f64) -> BeamEntry {
        let attrs: Vec<String> = attrs.iter().map(|s| s.to_string()).collect();
        let t = CorruptionTemplate::new(ErrorType::SelectionBias, &attrs, d).unwrap();
        let dcp = t.instantiate(&t.zero_theta()).unwrap();
        BeamEntry {
            template: t,
            best_dcp: dcp,
            psi,
            depth: 1,
        }
    }

    #[test]
    fn expansion_adds_one_unused_attribute() {
        let d = data();
        let c = SearchConfig::new(0.1, 0);
        let children = expand(&[entry(&d, &["work"], 0.5)], &d, &c, &BTreeSet::new());
        assert_eq!(
            names(&children),
            vec![vec!["work", "age"], vec!["work", "gender"], vec!["work", "race"], vec!["work", "y"]]
        );
        let mut capped = c.clone();
        capped.max_pattern_attrs = 2;
        assert!(expand(&[entry(&d, &["work", "age"], 0.5)], &d, &capped, &BTreeSet::new()).is_empty());
        // {work, age} reachable from both parents is emitted once
        let twice = expand(
            &[entry(&d, &["work"], 0.5), entry(&d, &["age"], 0.6)],
            &d,
            &c,
            &BTreeSet::new(),
        );
        let keys: BTreeSet<String> = twice.iter().map(|t| t.key()).collect();
        assert_eq!(keys.len(), twice.len());
    }

    #[test]
    fn beam_sort_tie_breaks() {
        let d = data();
        let mut v = vec![
            entry(&d, &["work", "age"], 0.3),
            entry(&d, &["race"], 0.3),
            entry(&d, &["gender"], 0.3),
            entry(&d, &["y"], 0.1),
        ];
        sort_beam(&mut v);
        let order: Vec<Vec<String>> = v.iter().map(|e| e.template.pattern_attributes.clone()).collect();
        assert_eq!(order, vec![vec!["y"], vec!["gender"], vec!["race"], vec!["work", "age"]]);
    }
}
