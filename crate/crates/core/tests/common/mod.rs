//! Synthetic truths shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use riskineq::data::{
    CovariateRule, NestingCounts, SyntheticCovariate, SyntheticSpec, VarianceComponents,
};
use riskineq::model::{FittedModel, McmcSettings, ModelSpec, NumericBasis};

pub fn categorical(name: &str, levels: &[&str], effects: &[f64], probs: &[f64]) -> SyntheticCovariate {
    SyntheticCovariate {
        name: name.into(),
        rule: CovariateRule::Categorical {
            levels: levels.iter().map(|s| s.to_string()).collect(),
            effects: effects.to_vec(),
            probs: probs.to_vec(),
            probs_by_year: BTreeMap::new(),
        },
    }
}

pub fn numeric(name: &str, mean: f64, sd: f64, slope: f64, range: (f64, f64)) -> SyntheticCovariate {
    SyntheticCovariate {
        name: name.into(),
        rule: CovariateRule::Numeric {
            mean,
            sd,
            mean_by_year: BTreeMap::new(),
            min: Some(range.0),
            max: Some(range.1),
            slope,
            center: mean,
        },
    }
}

pub fn no_random_effects() -> VarianceComponents {
    VarianceComponents {
        mother: 0.0,
        cluster: 0.0,
        district: [[0.0, 0.0], [0.0, 0.0]],
        state: [[0.0, 0.0], [0.0, 0.0]],
    }
}

/// Desk-scale truth with the application's structure: births nested in
/// mothers, clusters, districts and states over ten years, with sex, wealth
/// quintile and maternal age. About 2,000 births.
pub fn desk_truth() -> SyntheticSpec {
    SyntheticSpec {
        nesting: NestingCounts {
            states: 4,
            districts_per_state: 3,
            clusters_per_district: 5,
            mothers_per_cluster: 17,
            births_per_mother: (1, 3),
        },
        years: (1990..2000).collect(),
        year_weights: None,
        year_window: None,
        intercept: -2.2,
        year_effects: BTreeMap::new(),
        covariates: vec![
            categorical("sex", &["M", "F"], &[0.0, -0.25], &[0.51, 0.49]),
            categorical(
                "wealth",
                &["Q1", "Q2", "Q3", "Q4", "Q5"],
                &[0.0, -0.15, -0.3, -0.5, -0.8],
                &[0.2; 5],
            ),
            numeric("age", 25.0, 5.0, -0.03, (15.0, 45.0)),
        ],
        variances: VarianceComponents {
            mother: 0.3,
            cluster: 0.15,
            district: [[0.15, 0.0], [0.0, 0.005]],
            state: [[0.1, 0.0], [0.0, 0.002]],
        },
    }
}

/// The model matching [`desk_truth`]: additive, with a linear age term.
pub fn desk_model() -> ModelSpec {
    let mut m = ModelSpec::new(&["sex", "wealth", "age"]);
    m.interactions = false;
    m.default_numeric_basis = NumericBasis::Linear;
    m
}

pub fn mcmc(chains: usize, warmup: usize, draws: usize, seed: u64) -> McmcSettings {
    McmcSettings {
        chains,
        warmup,
        draws,
        seed,
        ..Default::default()
    }
}

/// Posterior draws of the fixed effects on the truth's scale: the linear
/// age term is fitted as `(x - c) / s`, so its raw slope is `a / s` and the
/// raw intercept absorbs `-a c / s`.
pub fn raw_fixed_effects(model: &FittedModel) -> BTreeMap<String, Vec<f64>> {
    let params = &model.params;
    let mut out = BTreeMap::new();
    let spec = &model.design.spec;
    let mut intercept = params.column(0);
    for (k, name) in spec.column_names.iter().enumerate().skip(1) {
        out.insert(name.clone(), params.column(k));
    }
    for term in &spec.terms {
        if let riskineq::model::TermCoding::Linear { center, scale, .. } = &term.coding {
            let col = out.get_mut(&term.name).unwrap();
            for (b0, a) in intercept.iter_mut().zip(col.iter_mut()) {
                *a /= *scale;
                *b0 -= *a * *center;
            }
        }
    }
    out.insert("(Intercept)".into(), intercept);
    out
}

/// Two birth years that differ only in the wealth distribution; every other
/// covariate and every coefficient is shared. About 4,000 births.
pub fn wealth_shift_truth() -> SyntheticSpec {
    let mut truth = desk_truth();
    truth.years = vec![1990, 1991];
    truth.nesting.mothers_per_cluster = 34;
    if let CovariateRule::Categorical {
        effects,
        probs_by_year,
        ..
    } = &mut truth.covariates[1].rule
    {
        *effects = vec![0.0, -0.4, -0.8, -1.2, -1.6];
        probs_by_year.insert(1990, vec![0.4, 0.3, 0.15, 0.1, 0.05]);
        probs_by_year.insert(1991, vec![0.05, 0.1, 0.15, 0.3, 0.4]);
    }
    truth
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One year in which a three-level `grade` fixes the risk at 0.02, 0.3 or
/// 0.7, with no random-effect variation.
pub fn determining_truth() -> SyntheticSpec {
    let mut truth = desk_truth();
    truth.years = vec![1995];
    truth.intercept = logit(0.02);
    truth.covariates = vec![categorical(
        "grade",
        &["low", "mid", "high"],
        &[0.0, logit(0.3) - logit(0.02), logit(0.7) - logit(0.02)],
        &[0.4, 0.3, 0.3],
    )];
    truth.variances = no_random_effects();
    truth
}

/// Ten births across two states with every random-effect level present.
pub fn ten_birth_truth() -> SyntheticSpec {
    SyntheticSpec {
        nesting: NestingCounts {
            states: 2,
            districts_per_state: 1,
            clusters_per_district: 2,
            mothers_per_cluster: 1,
            births_per_mother: (3, 3),
        },
        years: vec![1990, 1991, 1992],
        year_weights: None,
        year_window: None,
        intercept: -0.5,
        year_effects: BTreeMap::new(),
        covariates: vec![
            categorical("sex", &["M", "F"], &[0.0, 0.3], &[0.5, 0.5]),
            numeric("age", 25.0, 5.0, 0.05, (15.0, 35.0)),
        ],
        variances: VarianceComponents {
            mother: 0.5,
            cluster: 0.3,
            district: [[0.2, 0.0], [0.0, 0.01]],
            state: [[0.2, 0.0], [0.0, 0.01]],
        },
    }
}
