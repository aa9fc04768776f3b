//! Acceptance suite. Every primary criterion runs in sequence and prints
//! one `PASS`/`FAIL` line with its measurements and wall time; the test
//! fails at the end if any criterion did.
//!
//! Run with `cargo test -p stress-core --test acceptance -- --nocapture`.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::Rng;

use stress_core::corruption::{
    expected_fraction, project_to_budget, CorruptionTemplate, Domain, ParamValue, Pattern, RangeCondition,
};
use stress_core::dataset::{split, Dataset};
use stress_core::metrics::{self, MetricName, Objective};
use stress_core::optimizer::{
    beam_search, evaluate_clean, evaluate_dcp, random_baseline, random_parameter_search, tpe_run, uniform_theta,
    warm_start, ErrorClass, PipelineEvaluator, SearchConfig,
};
use stress_core::pipeline::{Cleaner, ModelSpec, PipelineSpec};
use stress_core::rng;
use stress_core::synthetic;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

/// Runs one criterion and reports it. The time limit is part of the verdict.
fn criterion(name: &str, limit: Duration, body: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = body();
    let elapsed = start.elapsed();
    let passed = v.passed && elapsed <= limit;
    let line = format!(
        "{} {name}: {} [{:.1}s, limit {}s]",
        if passed { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    // straight to the stdout handle so the line survives output capture
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
    passed
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn auc() -> Objective {
    Objective::new(MetricName::Auc)
}

fn evaluator(data: &Dataset, split_seed: u64, cleaner: Cleaner) -> PipelineEvaluator {
    let s = split(data, 0.8, split_seed).unwrap();
    PipelineEvaluator::new(
        s.train,
        s.test,
        Arc::new(PipelineSpec::new(cleaner, ModelSpec::logistic())),
        auc(),
    )
}

/// The shared census-like fixture.
fn fixture() -> Dataset {
    synthetic::adult_like(2000, 11)
}

fn eval_seed(config: &SearchConfig) -> u64 {
    rng::derive(config.seed, "evaluation")
}

/// Pattern as a sorted list of `attribute=bound` strings.
fn describe(pattern: &Pattern) -> Vec<String> {
    let mut v: Vec<String> = pattern
        .conditions
        .iter()
        .map(|c| format!("{}={:?}", c.attribute, c.bound))
        .collect();
    v.sort();
    v
}

/// Template over a uniformly drawn error type and 1..=3 attributes.
fn random_template(data: &Dataset, classes: &[ErrorClass], rng: &mut impl Rng) -> CorruptionTemplate {
    let schema = data.schema();
    let n = schema.attributes.len();
    loop {
        let class = &classes[rng.random_range(0..classes.len())];
        let types = class.error_types(data).unwrap();
        let error = types[rng.random_range(0..types.len())].clone();
        let k = rng.random_range(1..=3);
        let attrs: Vec<String> = index::sample(rng, n, k)
            .into_iter()
            .map(|i| schema.attributes[i].name.clone())
            .collect();
        if let Ok(t) = CorruptionTemplate::new(error, &attrs, data) {
            return t;
        }
    }
}

fn all_classes() -> Vec<ErrorClass> {
    vec![
        ErrorClass::MissingValue { target: None },
        ErrorClass::LabelError,
        ErrorClass::SelectionBias,
    ]
}

fn identity_corruption() -> Verdict {
    let data = synthetic::adult_like(5000, 2);
    let ev = evaluator(&data, 2, Cleaner::MeanImpute);
    let mut config = SearchConfig::new(0.0, 4);
    config.tpe_iterations = 5;
    config.n_init = 5;
    let clean = evaluate_clean(&ev, eval_seed(&config), 1).unwrap();
    let found = beam_search(&ev, &ErrorClass::MissingValue { target: None }, &config).unwrap();

    // p = 0 on a label template that would otherwise flip every label
    let label = ev.train.schema().label.clone();
    let error = ErrorClass::LabelError.error_types(&ev.train).unwrap()[0].clone();
    let t = CorruptionTemplate::new(error, &[label], &ev.train).unwrap();
    let mut theta = uniform_theta(&t.parameter_space, &mut rng::rng_for(1));
    theta[0] = ParamValue::Real(0.0);
    let zero_p = evaluate_dcp(&ev, &t.instantiate(&theta).unwrap(), eval_seed(&config), 1).unwrap();
    verdict(
        found.psi.to_bits() == clean.to_bits() && zero_p.to_bits() == clean.to_bits(),
        format!("clean {clean} budget-0 search {} p=0 {zero_p}", found.psi),
    )
}

fn budget_compliance() -> Verdict {
    let data = fixture();
    let budget = 0.25;
    let n = data.n_rows() as f64;
    let sigma = (budget * (1.0 - budget) / n).sqrt();
    let mut rng = rng::rng_for(rng::derive(0, "acceptance/budget"));
    let (mut over_budget, mut outside_band, mut worst, mut applications) = (0, 0, 0.0f64, 0);
    for _ in 0..50 {
        let t = random_template(&data, &all_classes(), &mut rng);
        let theta = uniform_theta(&t.parameter_space, &mut rng);
        let dcp = project_to_budget(&t.instantiate(&theta).unwrap(), &data, budget).unwrap();
        let expected = expected_fraction(&dcp, &data).unwrap();
        if expected > budget {
            over_budget += 1;
        }
        let mut total = 0.0;
        for seed in 0..200 {
            let f = dcp.apply(&data, seed).unwrap().corrupted_fraction();
            worst = worst.max(f);
            total += f;
            applications += 1;
        }
        // the mean over the seeded applications sits at the expected
        // fraction, which projection keeps at or below the budget
        let mean = total / 200.0;
        if mean > budget + 3.0 * sigma || (mean - expected).abs() > 3.0 * sigma {
            outside_band += 1;
        }
    }
    verdict(
        over_budget == 0 && outside_band == 0,
        format!(
            "{applications} applications, expected > budget: {over_budget}, mean outside ±3σ (σ={sigma:.4}): {outside_band}, worst single application {worst:.4}"
        ),
    )
}

/// O(n²) Mann-Whitney count with half credit for ties.
fn pair_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn auc_oracle() -> Verdict {
    let mut rng = rng::rng_for(rng::derive(0, "acceptance/auc"));
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = rng.random_range(2..=200);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        // every third instance draws from a small grid to force ties
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if case % 3 == 0 {
                    rng.random_range(0..5) as f64
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let fast = metrics::auc(&scores, &labels).unwrap();
        worst = worst.max((fast - pair_auc(&scores, &labels)).abs());
    }
    verdict(worst <= 1e-12, format!("max |rank - pairs| over 1000 instances {worst:e}"))
}

fn beam_vs_random() -> Verdict {
    let data = synthetic::adult_like(5000, 0);
    let ev = evaluator(&data, 1, Cleaner::MeanImpute);
    let config = SearchConfig::new(0.5, 7);
    let class = ErrorClass::MissingValue { target: None };
    let clean = evaluate_clean(&ev, eval_seed(&config), 1).unwrap();
    let random = random_baseline(&ev, &class, &config, 100).unwrap();
    let beam = beam_search(&ev, &class, &config).unwrap();
    verdict(
        beam.psi <= random.psi - 0.10,
        format!(
            "clean {clean:.4}, random(100) {:.4}, beam {:.4} via {} ({} evaluations), gap {:.4} (need 0.10)",
            random.psi,
            beam.psi,
            beam.best.template.key(),
            beam.evaluations(),
            random.psi - beam.psi
        ),
    )
}

fn tpe_vs_random() -> Verdict {
    let data = fixture();
    let ev = evaluator(&data, 3, Cleaner::MeanImpute);
    let config = SearchConfig::new(0.25, 5);
    let settings = config.tpe_settings();
    let mut rng = rng::rng_for(rng::derive(0, "acceptance/templates"));
    let mut wins = 0;
    let mut gaps = Vec::new();
    for i in 0..20 {
        let t = random_template(&ev.train, &all_classes(), &mut rng);
        let tpe = tpe_run(&t, &ev, &config, &settings, &[], &mut rng::rng_for(rng::derive_index(1, i)), 0).unwrap();
        let random = random_parameter_search(&t, &ev, &config, &mut rng::rng_for(rng::derive_index(2, i))).unwrap();
        if tpe.psi <= random.psi {
            wins += 1;
        }
        gaps.push(random.psi - tpe.psi);
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    verdict(
        wins >= 14,
        format!("TPE at least as damaging on {wins}/20 templates (need 14), mean psi advantage {mean_gap:.4}"),
    )
}

fn error_type_severity() -> Verdict {
    let data = fixture();
    let ev = evaluator(&data, 3, Cleaner::MeanImpute);
    let config = SearchConfig::new(0.25, 6);
    let psi = |class: ErrorClass| beam_search(&ev, &class, &config).unwrap().psi;
    let mv = psi(ErrorClass::MissingValue { target: None });
    let le = psi(ErrorClass::LabelError);
    let sb = psi(ErrorClass::SelectionBias);
    verdict(le <= mv && sb <= mv, format!("best psi LE {le:.4}, SB {sb:.4}, MV {mv:.4}"))
}

fn conformal_evaluator(trial: u64, alpha: f64) -> PipelineEvaluator {
    let data = synthetic::regression(500, 1.0, trial);
    let s = split(&data, 0.8, trial).unwrap();
    PipelineEvaluator::new(
        s.train,
        s.test,
        Arc::new(PipelineSpec::new(Cleaner::None, ModelSpec::conformal(alpha))),
        Objective::new(MetricName::Coverage),
    )
}

fn conformal_degradation() -> Verdict {
    let fresh = synthetic::regression(5000, 1.0, 99_999);
    let mut passed = true;
    let mut parts = Vec::new();
    for (alpha, needed) in [(0.05, 0.03), (0.2, 0.05)] {
        let trials = 50;
        let (mut clean, mut found, mut held_clean, mut held_found) = (0.0, 0.0, 0.0, 0.0);
        for trial in 0..trials {
            let ev = conformal_evaluator(trial, alpha);
            let config = SearchConfig::new(0.3, 0);
            let seed = eval_seed(&config);
            clean += evaluate_clean(&ev, seed, 1).unwrap();
            let outcome = beam_search(&ev, &ErrorClass::MissingValue { target: None }, &config).unwrap();
            found += outcome.psi;
            // the same corrupted training data scored on unseen rows
            let held = PipelineEvaluator::new(ev.train.clone(), fresh.clone(), ev.pipeline.clone(), ev.objective.clone());
            held_clean += evaluate_clean(&held, seed, 1).unwrap();
            held_found += evaluate_dcp(&held, &outcome.best, seed, 1).unwrap();
        }
        let n = trials as f64;
        let (clean, found) = (clean / n, found / n);
        let drop = clean - found;
        passed &= clean >= 1.0 - alpha - 0.03 && drop >= needed;
        parts.push(format!(
            "alpha {alpha}: clean {clean:.4} (need {:.2}), corrupted {found:.4}, drop {drop:.4} (need {needed}); held-out drop {:.4}",
            1.0 - alpha - 0.03,
            (held_clean - held_found) / n
        ));
    }
    verdict(passed, parts.join("; "))
}

/// Best pattern over every ≤3-attribute label-error template on the
/// planted fixture, enumerating all value combinations and a grid of p.
fn planted_oracle(ev: &PipelineEvaluator, config: &SearchConfig) -> (Vec<String>, f64, f64) {
    let data = &ev.train;
    let names: Vec<String> = data.schema().attributes.iter().map(|a| a.name.clone()).collect();
    let error = ErrorClass::LabelError.error_types(data).unwrap()[0].clone();
    let n = names.len();
    let mut subsets: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        subsets.push(vec![i]);
        for j in i + 1..n {
            subsets.push(vec![i, j]);
            for k in j + 1..n {
                subsets.push(vec![i, j, k]);
            }
        }
    }
    let mut results: Vec<(f64, Vec<String>)> = Vec::new();
    for subset in subsets {
        let attrs: Vec<String> = subset.iter().map(|&i| names[i].clone()).collect();
        let t = CorruptionTemplate::new(error.clone(), &attrs, data).unwrap();
        let sizes: Vec<usize> = t.parameter_space.dimensions[1..]
            .iter()
            .map(|d| match &d.domain {
                Domain::Choice { options } => options.len(),
                other => panic!("categorical fixture, got {other:?}"),
            })
            .collect();
        let combos: usize = sizes.iter().product();
        for combo in 0..combos {
            let mut best = f64::INFINITY;
            let mut pattern = Vec::new();
            for p in [0.5, 0.75, 1.0] {
                let mut theta = vec![ParamValue::Real(p)];
                let mut rest = combo;
                for &size in &sizes {
                    theta.push(ParamValue::Choice(rest % size));
                    rest /= size;
                }
                let dcp = project_to_budget(&t.instantiate(&theta).unwrap(), data, config.budget).unwrap();
                let psi = evaluate_dcp(ev, &dcp, eval_seed(config), 1).unwrap();
                if psi < best {
                    best = psi;
                    pattern = describe(&dcp.pattern);
                }
            }
            results.push((best, pattern));
        }
    }
    results.sort_by(|a, b| a.0.total_cmp(&b.0));
    let runner_up = results.iter().find(|r| r.1 != results[0].1).map_or(f64::INFINITY, |r| r.0);
    (results[0].1.clone(), results[0].0, runner_up)
}

fn planted_recovery() -> Verdict {
    let data = synthetic::planted(3000, 0);
    let ev = evaluator(&data, 0, Cleaner::MeanImpute);
    let config = SearchConfig::new(0.15, 0);
    let planted = describe(
        &Pattern::new(vec![
            RangeCondition::equals("segment", "s1"),
            RangeCondition::equals("label", "yes"),
        ])
        .unwrap(),
    );
    let (oracle, oracle_psi, runner_up) = planted_oracle(&ev, &config);
    let found = beam_search(&ev, &ErrorClass::LabelError, &config).unwrap();
    let returned = describe(&found.best.pattern);
    verdict(
        oracle == planted && returned == planted,
        format!(
            "oracle best {oracle:?} psi {oracle_psi:.4} (runner-up {runner_up:.4}); beam returned {returned:?} psi {:.4}",
            found.psi
        ),
    )
}

fn stress(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_stress")).args(args).output().unwrap()
}

fn report_without_timings(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timings");
    v
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let out = stress(&[
        "generate", "--kind", "adult", "--rows", "1500", "--seed", "9", "--out",
        dir.path().join("data").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "dataset = \"data/data.csv\"\nschema = \"data/schema.json\"\noutput_dir = \"out\"\nrandom_baseline_trials = 20\n\
         [error]\ntype = \"missing_value\"\n[objective]\nname = \"auc\"\n\
         [pipeline]\ncleaner = \"mean_impute\"\n[pipeline.model]\nkind = \"logistic_regression\"\n\
         [search]\nbudget = 0.3\nseed = 13\ntpe_iterations = 30\n",
    )
    .unwrap();
    let report = dir.path().join("out/report.json");
    let mut runs = Vec::new();
    for _ in 0..2 {
        let out = stress(&["run", "--config", config.to_str().unwrap(), "--jobs", "8"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        runs.push(report_without_timings(&report));
    }
    let a = serde_json::to_vec(&runs[0]).unwrap();
    let b = serde_json::to_vec(&runs[1]).unwrap();
    verdict(
        a == b,
        format!(
            "two --jobs 8 runs, report.json without timings: {} bytes vs {} bytes, identical: {}",
            a.len(),
            b.len(),
            a == b
        ),
    )
}

fn warm_start_efficiency() -> Verdict {
    let data = fixture();
    let proxy = evaluator(&data, 3, Cleaner::MeanImpute);
    let target = evaluator(&data, 3, Cleaner::KnnImpute { k: 5 });
    let config = SearchConfig::new(0.25, 8);
    let class = ErrorClass::MissingValue { target: None };
    let full = beam_search(&target, &class, &config).unwrap();
    let proxy_search = beam_search(&proxy, &class, &config).unwrap();
    let warm = warm_start(&proxy_search, &target, &config).unwrap();
    let used = warm.records.len();
    let allowed = full.evaluations() as f64 * 0.25;
    verdict(
        warm.psi <= full.psi + 0.02 && used as f64 <= allowed,
        format!(
            "full search psi {:.4} in {} target evaluations; warm start psi {:.4} in {used} (limit {allowed:.0}); proxy search {} evaluations",
            full.psi,
            full.evaluations(),
            warm.psi,
            proxy_search.evaluations()
        ),
    )
}

#[test]
fn primary_criteria() {
    let results = [
        criterion("identity corruption", minutes(1), identity_corruption),
        criterion("budget compliance", minutes(5), budget_compliance),
        criterion("AUC oracle", minutes(1), auc_oracle),
        criterion("beam vs random", minutes(30), beam_vs_random),
        criterion("TPE vs random", minutes(30), tpe_vs_random),
        criterion("error-type severity", minutes(45), error_type_severity),
        criterion("conformal degradation", minutes(30), conformal_degradation),
        criterion("planted-vulnerability recovery", minutes(20), planted_recovery),
        criterion("determinism", minutes(30), determinism),
        criterion("warm-start efficiency", minutes(30), warm_start_efficiency),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
