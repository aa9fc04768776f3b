//! Tree-structured Parzen Estimator over a box-shaped parameter space.
//!
//! Dimensions are modelled independently: truncated Gaussian kernels for
//! real intervals and add-one-smoothed frequencies for choices.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{evaluate_dcp, DcpEvaluator, EvalRecord, OptimizerError, SearchConfig};
use crate::corruption::{project_to_budget, CorruptionTemplate, Dcp, Domain, ParamValue, ParameterSpace, Theta};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub theta: Theta,
    /// Normalized objective; `+inf` marks a failed evaluation.
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialHistory {
    pub trials: Vec<Trial>,
    pub gamma: f64,
}

impl TrialHistory {
    pub fn new(gamma: f64) -> Self {
        Self {
            trials: Vec::new(),
            gamma,
        }
    }

    pub fn push(&mut self, theta: Theta, psi: f64) {
        self.trials.push(Trial { theta, psi });
    }

    fn finite(&self) -> Vec<&Trial> {
        self.trials.iter().filter(|t| t.psi.is_finite()).collect()
    }

    /// `(promising, poor)` split of the finite trials: the lowest
    /// `ceil(gamma * n)` psi values against the rest.
    pub fn split(&self) -> (Vec<&Trial>, Vec<&Trial>) {
        let mut ok = self.finite();
        // stable sort keeps insertion order among equal psi values
        ok.sort_by(|a, b| a.psi.total_cmp(&b.psi));
        let n_good = ((self.gamma * ok.len() as f64).ceil() as usize).clamp(1, ok.len().max(1));
        let poor = ok.split_off(n_good.min(ok.len()));
        (ok, poor)
    }

    /// The psi value separating promising from poor trials.
    pub fn threshold(&self) -> Option<f64> {
        let (good, _) = self.split();
        good.last().map(|t| t.psi)
    }

    pub fn best(&self) -> Option<&Trial> {
        self.trials
            .iter()
            .enumerate()
            .filter(|(_, t)| t.psi.is_finite())
            .min_by(|(i, a), (j, b)| a.psi.total_cmp(&b.psi).then(i.cmp(j)))
            .map(|(_, t)| t)
    }
}

/// Knobs of the suggestion rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpeSettings {
    pub n_init: usize,
    pub gamma: f64,
    pub candidate_pool: usize,
}

impl From<&SearchConfig> for TpeSettings {
    fn from(c: &SearchConfig) -> Self {
        Self {
            n_init: c.n_init,
            gamma: c.gamma,
            candidate_pool: c.candidate_pool,
        }
    }
}

pub fn uniform_theta(space: &ParameterSpace, rng: &mut ChaCha8Rng) -> Theta {
    space
        .dimensions
        .iter()
        .map(|d| match &d.domain {
            Domain::Real { low, high } => {
                if high > low {
                    ParamValue::Real(rng.random_range(*low..=*high))
                } else {
                    ParamValue::Real(*low)
                }
            }
            Domain::Choice { options } => ParamValue::Choice(rng.random_range(0..options.len())),
        })
        .collect()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

/// Mixture of Gaussian kernels truncated to `[low, high]`.
struct KernelDensity {
    centers: Vec<f64>,
    bandwidth: f64,
    low: f64,
    high: f64,
    /// Probability mass of each kernel inside the box.
    mass: Vec<f64>,
}

impl KernelDensity {
    fn fit(points: &[f64], low: f64, high: f64) -> Self {
        let n = points.len() as f64;
        let mean = points.iter().sum::<f64>() / n;
        let std = (points.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        let bandwidth = ((high - low) / 20.0).max(std * n.powf(-0.2));
        let mass = points
            .iter()
            .map(|&c| {
                (normal_cdf((high - c) / bandwidth) - normal_cdf((low - c) / bandwidth)).max(1e-300)
            })
            .collect();
        Self {
            centers: points.to_vec(),
            bandwidth,
            low,
            high,
            mass,
        }
    }

    fn log_pdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
        let total: f64 = self
            .centers
            .iter()
            .zip(&self.mass)
            .map(|(&c, &m)| {
                let z = (x - c) / h;
                norm * (-0.5 * z * z).exp() / m
            })
            .sum();
        (total / self.centers.len() as f64).max(1e-300).ln()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let c = self.centers[rng.random_range(0..self.centers.len())];
        for _ in 0..64 {
            let z: f64 = StandardNormal.sample(rng);
            let x = c + self.bandwidth * z;
            if (self.low..=self.high).contains(&x) {
                return x;
            }
        }
        c.clamp(self.low, self.high)
    }
}

struct CategoricalDensity {
    probs: Vec<f64>,
}

impl CategoricalDensity {
    fn fit(points: &[usize], k: usize) -> Self {
        let mut counts = vec![1.0; k];
        for &p in points {
            counts[p] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        Self {
            probs: counts.into_iter().map(|c| c / total).collect(),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }
}

enum DimDensity {
    Real(KernelDensity),
    Choice(CategoricalDensity),
    Fixed(f64),
}

impl DimDensity {
    fn fit(domain: &Domain, values: &[ParamValue]) -> Self {
        match domain {
            Domain::Real { low, high } => {
                if high <= low {
                    return DimDensity::Fixed(*low);
                }
                let pts: Vec<f64> = values.iter().filter_map(|v| v.as_real()).collect();
                DimDensity::Real(KernelDensity::fit(&pts, *low, *high))
            }
            Domain::Choice { options } => {
                let pts: Vec<usize> = values
                    .iter()
                    .filter_map(|v| match v {
                        ParamValue::Choice(i) if *i < options.len() => Some(*i),
                        _ => None,
                    })
                    .collect();
                DimDensity::Choice(CategoricalDensity::fit(&pts, options.len()))
            }
        }
    }

    fn log_pdf(&self, v: ParamValue) -> f64 {
        match (self, v) {
            (DimDensity::Real(k), ParamValue::Real(x)) => k.log_pdf(x),
            (DimDensity::Choice(c), ParamValue::Choice(i)) => c.probs[i].ln(),
            _ => 0.0,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> ParamValue {
        match self {
            DimDensity::Real(k) => ParamValue::Real(k.sample(rng)),
            DimDensity::Choice(c) => ParamValue::Choice(c.sample(rng)),
            DimDensity::Fixed(x) => ParamValue::Real(*x),
        }
    }
}

/// Next point to evaluate: uniform while fewer than `n_init` finite trials
/// exist, otherwise the pool sample from `g` with the highest `g / l`.
pub fn tpe_suggest(
    history: &TrialHistory,
    space: &ParameterSpace,
    settings: &TpeSettings,
    rng: &mut ChaCha8Rng,
) -> Theta {
    let (good, poor) = history.split();
    if good.len() + poor.len() < settings.n_init.max(1) || poor.is_empty() {
        return uniform_theta(space, rng);
    }
    let column = |set: &[&Trial], d: usize| -> Vec<ParamValue> { set.iter().map(|t| t.theta[d]).collect() };
    let g: Vec<DimDensity> = space
        .dimensions
        .iter()
        .enumerate()
        .map(|(d, dim)| DimDensity::fit(&dim.domain, &column(&good, d)))
        .collect();
    let l: Vec<DimDensity> = space
        .dimensions
        .iter()
        .enumerate()
        .map(|(d, dim)| DimDensity::fit(&dim.domain, &column(&poor, d)))
        .collect();

    let mut best: Option<(f64, Theta)> = None;
    for _ in 0..settings.candidate_pool.max(1) {
        let theta: Theta = g.iter().map(|dens| dens.sample(rng)).collect();
        let score: f64 = theta
            .iter()
            .zip(g.iter().zip(&l))
            .map(|(&v, (gd, ld))| gd.log_pdf(v) - ld.log_pdf(v))
            .sum();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, theta));
        }
    }
    best.map(|(_, t)| t).unwrap_or_else(|| uniform_theta(space, rng))
}

/// Result of tuning one template.
#[derive(Debug, Clone)]
pub struct TpeOutcome {
    /// Best projected process; `None` if every evaluation failed.
    pub best: Option<Dcp>,
    pub psi: f64,
    pub history: TrialHistory,
    pub records: Vec<EvalRecord>,
}

/// Runs `config.tpe_iterations` suggest → instantiate → project → evaluate
/// rounds. `prior` trials are fitted but not re-evaluated; without them
/// the first round evaluates the zero-corruption point.
pub fn tpe_run(
    template: &CorruptionTemplate,
    evaluator: &dyn DcpEvaluator,
    config: &SearchConfig,
    settings: &TpeSettings,
    prior: &[Trial],
    rng: &mut ChaCha8Rng,
    depth: usize,
) -> Result<TpeOutcome, OptimizerError> {
    let data = evaluator.dataset();
    let eval_seed = rng::derive(config.seed, "evaluation");
    let mut history = TrialHistory::new(settings.gamma);
    history.trials.extend(prior.iter().cloned());
    let mut records = Vec::with_capacity(config.tpe_iterations);
    let mut best: Option<(f64, Dcp)> = None;

    for it in 0..config.tpe_iterations {
        let theta = if it == 0 && prior.is_empty() {
            template.zero_theta()
        } else {
            tpe_suggest(&history, &template.parameter_space, settings, rng)
        };
        let dcp = project_to_budget(&template.instantiate(&theta)?, data, config.budget)?;
        let start = Instant::now();
        let result = evaluate_dcp(evaluator, &dcp, eval_seed, config.repeats);
        let wall = start.elapsed().as_secs_f64();
        let (psi, error) = match result {
            Ok(v) if v.is_finite() => (v, None),
            Ok(v) => (f64::INFINITY, Some(format!("non-finite objective {v}"))),
            Err(e) => {
                log::warn!("evaluation of {} failed: {e}", template.key());
                (f64::INFINITY, Some(e.to_string()))
            }
        };
        records.push(EvalRecord {
            depth,
            template: template.key(),
            theta: dcp.theta.clone(),
            p: dcp.p,
            psi: psi.is_finite().then_some(psi),
            error,
            wall_secs: wall,
        });
        if psi.is_finite() && best.as_ref().is_none_or(|(b, _)| psi < *b) {
            best = Some((psi, dcp.clone()));
        }
        history.push(dcp.theta, psi);
    }
    let (psi, best) = match best {
        Some((psi, dcp)) => (psi, Some(dcp)),
        None => (f64::INFINITY, None),
    };
    Ok(TpeOutcome {
        best,
        psi,
        history,
        records,
    })
}
