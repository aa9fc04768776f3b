//! Random-search baselines.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tpe::{tpe_run, uniform_theta, TpeOutcome, TpeSettings};
use super::{evaluate_dcp, DcpEvaluator, ErrorClass, EvalRecord, OptimizerError, SearchConfig};
use crate::corruption::{project_to_budget, CorruptionTemplate, Dcp};
use crate::rng;

/// Parameter search for one template with every suggestion drawn
/// uniformly, under the same evaluation count as [`tpe_run`].
pub fn random_parameter_search(
    template: &CorruptionTemplate,
    evaluator: &dyn DcpEvaluator,
    config: &SearchConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TpeOutcome, OptimizerError> {
    let settings = TpeSettings {
        n_init: config.tpe_iterations.max(1),
        ..config.tpe_settings()
    };
    tpe_run(template, evaluator, config, &settings, &[], rng, 0)
}

#[derive(Debug, Clone)]
pub struct RandomBaseline {
    pub best: Dcp,
    pub psi: f64,
    pub records: Vec<EvalRecord>,
}

const MAX_DRAWS_PER_TRIAL: usize = 100;

/// Worst psi over `n_trials` uniformly sampled (template, theta) pairs:
/// error type, pattern size in `1..=max_pattern_attrs` and attribute set
/// are drawn uniformly, then theta uniformly from the template's box and
/// projected to the budget.
pub fn random_baseline(
    evaluator: &dyn DcpEvaluator,
    error_class: &ErrorClass,
    config: &SearchConfig,
    n_trials: usize,
) -> Result<RandomBaseline, OptimizerError> {
    if n_trials == 0 {
        return Err(OptimizerError::Config("random baseline needs at least one trial".into()));
    }
    config.validate()?;
    let data = evaluator.dataset();
    let schema = data.schema();
    let errors = error_class.error_types(data)?;
    let n_attrs = schema.attributes.len();
    let max_k = config.max_pattern_attrs.min(n_attrs);
    let mut rng = rng::rng_for(rng::derive(config.seed, "random_baseline"));
    let eval_seed = rng::derive(config.seed, "evaluation");
    let mut best: Option<(f64, Dcp)> = None;
    let mut records = Vec::with_capacity(n_trials);

    for _ in 0..n_trials {
        let mut template = None;
        for _ in 0..MAX_DRAWS_PER_TRIAL {
            let error = &errors[rng.random_range(0..errors.len())];
            let k = rng.random_range(1..=max_k);
            let attrs: Vec<String> = index::sample(&mut rng, n_attrs, k)
                .into_iter()
                .map(|i| schema.attributes[i].name.clone())
                .collect();
            if let Ok(t) = CorruptionTemplate::new(error.clone(), &attrs, data) {
                template = Some(t);
                break;
            }
        }
        let template = template.ok_or_else(|| OptimizerError::NoSeeds("no valid random template".into()))?;
        let theta = uniform_theta(&template.parameter_space, &mut rng);
        let dcp = project_to_budget(&template.instantiate(&theta)?, data, config.budget)?;
        let start = std::time::Instant::now();
        let result = evaluate_dcp(evaluator, &dcp, eval_seed, config.repeats);
        let psi = result.as_ref().ok().copied().filter(|v| v.is_finite());
        records.push(EvalRecord {
            depth: 0,
            template: template.key(),
            theta: dcp.theta.clone(),
            p: dcp.p,
            psi,
            error: result.err().map(|e| e.to_string()),
            wall_secs: start.elapsed().as_secs_f64(),
        });
        if let Some(v) = psi {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, dcp));
            }
        }
    }
    let (psi, best) = best.ok_or(OptimizerError::AllFailed)?;
    Ok(RandomBaseline { best, psi, records })
}
