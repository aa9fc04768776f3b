//! Reusing search results: warm-starting from a cheap proxy pipeline and
//! searching on a sample before evaluating on the full data.

use serde::{Deserialize, Serialize};

use super::beam::{beam_search, SearchOutcome};
use super::tpe::{tpe_run, Trial};
use super::{evaluate_dcp, DcpEvaluator, ErrorClass, EvalRecord, OptimizerError, SearchConfig};
use crate::corruption::{project_to_budget, Dcp};
use crate::dataset::Dataset;
use crate::rng;

#[derive(Debug, Clone)]
pub struct WarmStartOutcome {
    pub best: Dcp,
    pub psi: f64,
    /// Evaluations spent on the target.
    pub records: Vec<EvalRecord>,
}

fn check_compatible(dcp: &Dcp, target: &Dataset) -> Result<(), OptimizerError> {
    let schema = target.schema();
    for a in &dcp.template.pattern_attributes {
        if schema.index_of(a).is_none() {
            return Err(OptimizerError::Incompatible(format!("attribute '{a}' is not in the target schema")));
        }
    }
    if let crate::corruption::ErrorType::MissingValue { target: t } = dcp.error_type() {
        if schema.index_of(t).is_none() {
            return Err(OptimizerError::Incompatible(format!("target '{t}' is not in the target schema")));
        }
    }
    dcp.pattern
        .compile(target)
        .map_err(|e| OptimizerError::Incompatible(e.to_string()))?;
    Ok(())
}

/// Tunes the proxy's best template against `target`, starting from the
/// proxy's trials on that template. The proxy optimum is re-evaluated on
/// the target first, so the result is never worse than transferring it
/// unchanged. Only target evaluations decide the returned optimum.
pub fn warm_start(
    proxy: &SearchOutcome,
    target: &dyn DcpEvaluator,
    config: &SearchConfig,
) -> Result<WarmStartOutcome, OptimizerError> {
    config.validate()?;
    let data = target.dataset();
    check_compatible(&proxy.best, data)?;
    let template = &proxy.best.template;
    let key = template.key();
    let mut prior: Vec<Trial> = proxy
        .records
        .iter()
        .filter(|r| r.template == key)
        .filter_map(|r| r.psi.map(|psi| Trial { theta: r.theta.clone(), psi }))
        .collect();

    let eval_seed = rng::derive(config.seed, "evaluation");
    let transferred = project_to_budget(&proxy.best, data, config.budget)?;
    let start = std::time::Instant::now();
    let first = evaluate_dcp(target, &transferred, eval_seed, config.repeats);
    let first_psi = first.as_ref().ok().copied().filter(|v| v.is_finite());
    let mut records = vec![EvalRecord {
        depth: 0,
        template: key.clone(),
        theta: transferred.theta.clone(),
        p: transferred.p,
        psi: first_psi,
        error: first.err().map(|e| e.to_string()),
        wall_secs: start.elapsed().as_secs_f64(),
    }];
    if let Some(psi) = first_psi {
        prior.push(Trial {
            theta: transferred.theta.clone(),
            psi,
        });
    }

    let mut rng = rng::rng_for(rng::derive(config.seed, &format!("warm/{key}")));
    let tuned = tpe_run(template, target, config, &config.tpe_settings(), &prior, &mut rng, 0)?;
    records.extend(tuned.records);

    let mut best: Option<(f64, Dcp)> = first_psi.map(|v| (v, transferred));
    if let Some(dcp) = tuned.best {
        if best.as_ref().is_none_or(|(b, _)| tuned.psi < *b) {
            best = Some((tuned.psi, dcp));
        }
    }
    let (psi, best) = best.ok_or(OptimizerError::AllFailed)?;
    Ok(WarmStartOutcome { best, psi, records })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferOutcome {
    /// Winner of the sample search, re-projected on the full data.
    pub best: Dcp,
    pub psi_sample: f64,
    pub psi_full: f64,
    pub sample_rows: usize,
}

/// Beam search on a seeded `sample_fraction` subsample, then one
/// evaluation of the re-projected winner on the full data.
pub fn sample_then_transfer<E, F>(
    full: &E,
    make_sample: F,
    sample_fraction: f64,
    error_class: &ErrorClass,
    config: &SearchConfig,
) -> Result<(TransferOutcome, SearchOutcome), OptimizerError>
where
    E: DcpEvaluator,
    F: FnOnce(Dataset) -> E,
{
    let data = full.dataset();
    let sample = data.sample(sample_fraction, rng::derive(config.seed, "sample"))?;
    let sample_rows = sample.n_rows();
    let sample_eval = make_sample(sample);
    let search = beam_search(&sample_eval, error_class, config)?;
    let best = project_to_budget(&search.best, data, config.budget)?;
    let psi_full = evaluate_dcp(full, &best, rng::derive(config.seed, "evaluation"), config.repeats)?;
    Ok((
        TransferOutcome {
            best,
            psi_sample: search.psi,
            psi_full,
            sample_rows,
        },
        search,
    ))
}
