//! Seeded synthetic datasets used by tests, examples and the acceptance
//! suite.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Attribute, Dataset, Schema, Value};
use crate::rng;

fn pick<'a>(rng: &mut ChaCha8Rng, options: &[(&'a str, f64)]) -> &'a str {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (name, w) in options {
        acc += w;
        if u < acc {
            return name;
        }
    }
    options[options.len() - 1].0
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Census-income-like classification data with the fourteen attributes
/// of the classic census-income benchmark: eight categorical and six
/// numeric, label `income` with positive class `>50K` (about a quarter of
/// rows), sensitive attribute `sex`.
pub fn adult_like(n: usize, seed: u64) -> Dataset {
    let schema = Schema::new(
        vec![
            Attribute::numeric("age"),
            Attribute::categorical("workclass"),
            Attribute::numeric("fnlwgt"),
            Attribute::categorical("education"),
            Attribute::numeric("education_num"),
            Attribute::categorical("marital_status"),
            Attribute::categorical("occupation"),
            Attribute::categorical("relationship"),
            Attribute::categorical("race"),
            Attribute::categorical("sex"),
            Attribute::numeric("capital_gain"),
            Attribute::numeric("capital_loss"),
            Attribute::numeric("hours_per_week"),
            Attribute::categorical("native_region"),
            Attribute::categorical("income"),
        ],
        "income",
        Some("sex"),
        Some(">50K"),
    )
    .expect("static schema");
    let mut rng = rng::rng_for(rng::derive(seed, "adult_like"));
    let normal: Normal<f64> = Normal::new(0.0, 1.0).expect("unit normal");
    let rows = (0..n)
        .map(|_| {
            let age = (38.0 + 13.0 * normal.sample(&mut rng)).clamp(17.0, 90.0).round();
            let workclass = pick(
                &mut rng,
                &[("Private", 0.70), ("Self-emp", 0.12), ("Gov", 0.13), ("Other", 0.05)],
            );
            let fnlwgt = (12.0 + 0.5 * normal.sample(&mut rng)).exp().round();
            let education_num = (10.0 + 2.6 * normal.sample(&mut rng)).clamp(1.0, 16.0).round();
            let education = match education_num as u32 {
                0..=8 => "Dropout",
                9 => "HS-grad",
                10 => "Some-college",
                11 | 12 => "Assoc",
                13 => "Bachelors",
                14 => "Masters",
                15 => "Prof-school",
                _ => "Doctorate",
            };
            let sex = pick(&mut rng, &[("Male", 0.67), ("Female", 0.33)]);
            let married_p = 1.0 / (1.0 + (-(age - 30.0) / 8.0).exp()) * 0.75;
            let marital = if rng.random::<f64>() < married_p {
                "Married"
            } else {
                pick(&mut rng, &[("Never-married", 0.65), ("Divorced", 0.35)])
            };
            let relationship = match marital {
                "Married" if sex == "Male" => "Husband",
                "Married" => "Wife",
                "Never-married" if age < 25.0 && rng.random::<f64>() < 0.6 => "Own-child",
                "Never-married" => "Not-in-family",
                _ => pick(&mut rng, &[("Unmarried", 0.5), ("Not-in-family", 0.5)]),
            };
            let occupation = if education_num >= 13.0 {
                pick(&mut rng, &[("Exec", 0.35), ("Prof", 0.45), ("Sales", 0.2)])
            } else {
                pick(
                    &mut rng,
                    &[("Sales", 0.2), ("Craft", 0.3), ("Service", 0.25), ("Clerical", 0.25)],
                )
            };
            let race = pick(&mut rng, &[("White", 0.85), ("Black", 0.10), ("Other", 0.05)]);
            let gain = if rng.random::<f64>() < 0.9 {
                0.0
            } else {
                (7.5 + 1.2 * normal.sample(&mut rng)).exp().round()
            };
            let loss = if rng.random::<f64>() < 0.95 {
                0.0
            } else {
                (1900.0 + 300.0 * normal.sample(&mut rng)).max(100.0).round()
            };
            let hours = (40.0 + 11.0 * normal.sample(&mut rng)).clamp(1.0, 99.0).round();
            let region = pick(&mut rng, &[("North", 0.6), ("South", 0.25), ("Abroad", 0.15)]);
            let occ_effect = match occupation {
                "Exec" => 0.8,
                "Prof" => 0.6,
                "Sales" => 0.1,
                "Craft" => -0.1,
                "Service" => -0.8,
                _ => -0.3,
            };
            let logit = -2.4
                + 0.55 * (education_num - 10.0)
                + 0.025 * (age - 38.0)
                + if marital == "Married" { 1.6 } else { 0.0 }
                + occ_effect
                + 0.035 * (hours - 40.0)
                + if sex == "Male" { 0.3 } else { 0.0 }
                + if gain > 5000.0 { 1.5 } else { 0.0 }
                + if loss > 0.0 { 0.6 } else { 0.0 };
            let label = if rng.random::<f64>() < sigmoid(logit) { ">50K" } else { "<=50K" };
            vec![
                Value::Num(age),
                workclass.into(),
                Value::Num(fnlwgt),
                education.into(),
                Value::Num(education_num),
                marital.into(),
                occupation.into(),
                relationship.into(),
                race.into(),
                sex.into(),
                Value::Num(gain),
                Value::Num(loss),
                Value::Num(hours),
                region.into(),
                label.into(),
            ]
        })
        .collect();
    Dataset::from_rows(schema, rows).expect("consistent rows")
}

/// All-categorical classification data whose label is driven by the
/// `segment` attribute: rows with `segment = s1` are mostly positive,
/// the rest mostly negative. Four nuisance attributes carry no signal.
pub fn planted(n: usize, seed: u64) -> Dataset {
    let schema = Schema::new(
        vec![
            Attribute::categorical("segment"),
            Attribute::categorical("channel"),
            Attribute::categorical("tier"),
            Attribute::categorical("region"),
            Attribute::categorical("device"),
            Attribute::categorical("label"),
        ],
        "label",
        None,
        Some("yes"),
    )
    .expect("static schema");
    let mut rng = rng::rng_for(rng::derive(seed, "planted"));
    let rows = (0..n)
        .map(|_| {
            let segment = pick(&mut rng, &[("s0", 0.8), ("s1", 0.2)]);
            let channel = pick(&mut rng, &[("web", 0.5), ("store", 0.5)]);
            let tier = pick(&mut rng, &[("t0", 0.34), ("t1", 0.33), ("t2", 0.33)]);
            let region = pick(&mut rng, &[("east", 0.5), ("west", 0.5)]);
            let device = pick(&mut rng, &[("d0", 0.5), ("d1", 0.5)]);
            let p = if segment == "s1" { 0.6 } else { 0.3 };
            let label = if rng.random::<f64>() < p { "yes" } else { "no" };
            vec![
                segment.into(),
                channel.into(),
                tier.into(),
                region.into(),
                device.into(),
                label.into(),
            ]
        })
        .collect();
    Dataset::from_rows(schema, rows).expect("consistent rows")
}

/// Linear regression data `y = 2 x1 - x2 + 0.5 x3 + noise` with Gaussian
/// features and noise of standard deviation `noise_sd`.
pub fn regression(n: usize, noise_sd: f64, seed: u64) -> Dataset {
    let schema = Schema::new(
        vec![
            Attribute::numeric("x1"),
            Attribute::numeric("x2"),
            Attribute::numeric("x3"),
            Attribute::numeric("y"),
        ],
        "y",
        None,
        None,
    )
    .expect("static schema");
    let mut rng = rng::rng_for(rng::derive(seed, "regression"));
    let normal: Normal<f64> = Normal::new(0.0, 1.0).expect("unit normal");
    let rows = (0..n)
        .map(|_| {
            let x1: f64 = normal.sample(&mut rng);
            let x2: f64 = normal.sample(&mut rng);
            let x3: f64 = normal.sample(&mut rng);
            let y = 2.0 * x1 - x2 + 0.5 * x3 + noise_sd * normal.sample(&mut rng);
            vec![Value::Num(x1), Value::Num(x2), Value::Num(x3), Value::Num(y)]
        })
        .collect();
    Dataset::from_rows(schema, rows).expect("consistent rows")
}
