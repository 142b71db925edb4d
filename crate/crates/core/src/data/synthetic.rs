//! Synthetic birth populations drawn from the hierarchical logistic model,
//! with the true risks retained as a ground-truth oracle.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    centered_year, BirthRecord, ColumnKind, ColumnSpec, CovariateSchema, CovariateValue, Dataset,
    Unit,
};
use crate::error::{Error, Result};
use crate::model::logistic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestingCounts {
    pub states: usize,
    pub districts_per_state: usize,
    pub clusters_per_district: usize,
    pub mothers_per_cluster: usize,
    /// Inclusive range; each mother's birth count is uniform on it.
    pub births_per_mother: (usize, usize),
}

/// Random-effect variances. Zero entries switch a level off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub mother: f64,
    pub cluster: f64,
    /// Covariance of (intercept, slope) for districts.
    pub district: [[f64; 2]; 2],
    pub state: [[f64; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CovariateRule {
    /// The first level is the reference; `effects[k]` is its logit contribution.
    Categorical {
        levels: Vec<String>,
        effects: Vec<f64>,
        probs: Vec<f64>,
        #[serde(default, deserialize_with = "year_keyed")]
        probs_by_year: BTreeMap<i32, Vec<f64>>,
    },
    /// Normal draws clamped to `[min, max]`; contributes `slope * (x - center)`.
    Numeric {
        mean: f64,
        sd: f64,
        #[serde(default, deserialize_with = "year_keyed")]
        mean_by_year: BTreeMap<i32, f64>,
        #[serde(default)]
        min: Option<f64>,
        #[serde(default)]
        max: Option<f64>,
        #[serde(default)]
        slope: f64,
        #[serde(default)]
        center: f64,
    },
}

/// Year-keyed map. The rule is flattened into its covariate, which makes
/// serde buffer JSON object keys as strings, so parse them here.
fn year_keyed<'de, D, T>(de: D) -> std::result::Result<BTreeMap<i32, T>, D::Error>
where
    D: serde::Deserializer<'de>,
    T: Deserialize<'de>,
{
    BTreeMap::<String, T>::deserialize(de)?
        .into_iter()
        .map(|(k, v)| {
            k.trim()
                .parse()
                .map(|y| (y, v))
                .map_err(|_| serde::de::Error::custom(format!("`{k}` is not a year")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCovariate {
    pub name: String,
    #[serde(flatten)]
    pub rule: CovariateRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub nesting: NestingCounts,
    /// Years births are drawn from.
    pub years: Vec<i32>,
    #[serde(default)]
    pub year_weights: Option<Vec<f64>>,
    /// Study window written into the schema; defaults to the span of `years`.
    #[serde(default)]
    pub year_window: Option<(i32, i32)>,
    pub intercept: f64,
    /// Additive logit shift per year.
    #[serde(default)]
    pub year_effects: BTreeMap<i32, f64>,
    pub covariates: Vec<SyntheticCovariate>,
    pub variances: VarianceComponents,
}

/// True per-birth risks and linear predictors used to draw each outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueRisks {
    pub risks: Vec<f64>,
    pub linear_predictor: Vec<f64>,
}

impl SyntheticSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SyntheticSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        let n = &self.nesting;
        if n.states == 0
            || n.districts_per_state == 0
            || n.clusters_per_district == 0
            || n.mothers_per_cluster == 0
        {
            return bad("nesting counts must be positive".into());
        }
        if n.births_per_mother.0 == 0 || n.births_per_mother.0 > n.births_per_mother.1 {
            return bad("births_per_mother must be a range lo..=hi with lo >= 1".into());
        }
        if self.years.is_empty() {
            return bad("at least one year required".into());
        }
        if let Some(w) = &self.year_weights {
            check_probs("year_weights", w, self.years.len())?;
        }
        let (lo, hi) = self.window();
        if self.years.iter().any(|y| *y < lo || *y > hi) {
            return bad("years must lie inside year_window".into());
        }
        let v = &self.variances;
        if !(v.mother >= 0.0 && v.cluster >= 0.0) {
            return bad("variances must be nonnegative".into());
        }
        for (name, m) in [("district", v.district), ("state", v.state)] {
            let sym = (m[0][1] - m[1][0]).abs() <= 1e-12;
            let psd = m[0][0] >= 0.0 && m[1][1] >= 0.0 && m[0][0] * m[1][1] - m[0][1] * m[1][0] >= -1e-15;
            if !(sym && psd) {
                return bad(format!("{name} covariance must be symmetric positive semidefinite"));
            }
        }
        for c in &self.covariates {
            match &c.rule {
                CovariateRule::Categorical {
                    levels,
                    effects,
                    probs,
                    probs_by_year,
                } => {
                    if levels.is_empty() || effects.len() != levels.len() {
                        return bad(format!("`{}`: one effect per level required", c.name));
                    }
                    check_probs(&c.name, probs, levels.len())?;
                    for p in probs_by_year.values() {
                        check_probs(&c.name, p, levels.len())?;
                    }
                }
                CovariateRule::Numeric { sd, min, max, .. } => {
                    if !(*sd >= 0.0) {
                        return bad(format!("`{}`: sd must be nonnegative", c.name));
                    }
                    if let (Some(a), Some(b)) = (min, max) {
                        if a >= b {
                            return bad(format!("`{}`: min must be below max", c.name));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn window(&self) -> (i32, i32) {
        self.year_window.unwrap_or_else(|| {
            (
                *self.years.iter().min().unwrap(),
                *self.years.iter().max().unwrap(),
            )
        })
    }

    /// Schema of the generated dataset: `died`, `year`, the four id columns,
    /// then the covariates in spec order. First categorical level is the reference.
    pub fn schema(&self) -> CovariateSchema {
        let mut columns = vec![
            ColumnSpec {
                name: "died".into(),
                kind: ColumnKind::Outcome,
            },
            ColumnSpec {
                name: "year".into(),
                kind: ColumnKind::Year,
            },
        ];
        for unit in Unit::ALL {
            columns.push(ColumnSpec {
                name: unit.name().into(),
                kind: ColumnKind::Id { unit },
            });
        }
        for c in &self.covariates {
            let kind = match &c.rule {
                CovariateRule::Categorical { levels, .. } => ColumnKind::Categorical {
                    levels: levels.clone(),
                    reference: Some(levels[0].clone()),
                },
                CovariateRule::Numeric { min, max, .. } => ColumnKind::Numeric {
                    min: *min,
                    max: *max,
                },
            };
            columns.push(ColumnSpec {
                name: c.name.clone(),
                kind,
            });
        }
        CovariateSchema {
            year_window: self.window(),
            columns,
        }
    }

    /// True fixed effects under reference coding on the raw covariate scale,
    /// keyed by coefficient name (`(Intercept)`, `name[level]`, numeric `name`).
    /// Numeric covariates shift the intercept by `slope * (0 - center)`.
    pub fn true_fixed_effects(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        let mut intercept = self.intercept;
        for c in &self.covariates {
            match &c.rule {
                CovariateRule::Categorical {
                    levels, effects, ..
                } => {
                    intercept += effects[0];
                    for (l, e) in levels.iter().zip(effects).skip(1) {
                        out.insert(format!("{}[{}]", c.name, l), e - effects[0]);
                    }
                }
                CovariateRule::Numeric { slope, center, .. } => {
                    intercept -= slope * center;
                    out.insert(c.name.clone(), *slope);
                }
            }
        }
        out.insert("(Intercept)".to_string(), intercept);
        out
    }
}

fn check_probs(name: &str, p: &[f64], n: usize) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.len() != n || p.iter().any(|x| !(*x >= 0.0)) || sum <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "`{name}`: need {n} nonnegative probabilities with positive sum"
        )));
    }
    Ok(())
}

fn draw_bivariate(rng: &mut ChaCha8Rng, cov: [[f64; 2]; 2]) -> [f64; 2] {
    let l11 = cov[0][0].max(0.0).sqrt();
    let l21 = if l11 > 0.0 { cov[1][0] / l11 } else { 0.0 };
    let l22 = (cov[1][1] - l21 * l21).max(0.0).sqrt();
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    [l11 * z1, l21 * z1 + l22 * z2]
}

fn draw_scalar(rng: &mut ChaCha8Rng, var: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    var.max(0.0).sqrt() * z
}

/// Draws a dataset from the generative model. Deterministic given `seed`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, TrueRisks)> {
    spec.validate()?;
    let schema = spec.schema();
    let window = spec.window();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let year_dist = WeightedIndex::new(
        spec.year_weights
            .clone()
            .unwrap_or_else(|| vec![1.0; spec.years.len()]),
    )
    .map_err(|e| Error::InvalidInput(e.to_string()))?;

    let v = &spec.variances;
    let n = &spec.nesting;
    let mut records = Vec::new();
    let mut eta = Vec::new();
    for s in 0..n.states {
        let state_re = draw_bivariate(&mut rng, v.state);
        for d in 0..n.districts_per_state {
            let district_re = draw_bivariate(&mut rng, v.district);
            for c in 0..n.clusters_per_district {
                let cluster_re = draw_scalar(&mut rng, v.cluster);
                for m in 0..n.mothers_per_cluster {
                    let mother_re = draw_scalar(&mut rng, v.mother);
                    let births = rng.random_range(n.births_per_mother.0..=n.births_per_mother.1);
                    for _ in 0..births {
                        let year = spec.years[year_dist.sample(&mut rng)];
                        let t = centered_year(window, year);
                        let mut lp = spec.intercept
                            + spec.year_effects.get(&year).copied().unwrap_or(0.0)
                            + mother_re
                            + cluster_re
                            + district_re[0]
                            + district_re[1] * t
                            + state_re[0]
                            + state_re[1] * t;
                        let mut covariates = Vec::with_capacity(spec.covariates.len());
                        for cov in &spec.covariates {
                            match &cov.rule {
                                CovariateRule::Categorical {
                                    effects,
                                    probs,
                                    probs_by_year,
                                    ..
                                } => {
                                    let p = probs_by_year.get(&year).unwrap_or(probs);
                                    let l = WeightedIndex::new(p)
                                        .map_err(|e| Error::InvalidInput(e.to_string()))?
                                        .sample(&mut rng);
                                    lp += effects[l];
                                    covariates.push(CovariateValue::Level(l));
                                }
                                CovariateRule::Numeric {
                                    mean,
                                    sd,
                                    mean_by_year,
                                    min,
                                    max,
                                    slope,
                                    center,
                                } => {
                                    let mu = mean_by_year.get(&year).copied().unwrap_or(*mean);
                                    let mut x = if *sd > 0.0 {
                                        Normal::new(mu, *sd).unwrap().sample(&mut rng)
                                    } else {
                                        mu
                                    };
                                    if let Some(lo) = min {
                                        x = x.max(*lo);
                                    }
                                    if let Some(hi) = max {
                                        x = x.min(*hi);
                                    }
                                    lp += slope * (x - center);
                                    covariates.push(CovariateValue::Number(x));
                                }
                            }
                        }
                        let p = logistic(lp);
                        let outcome = u8::from(rng.random::<f64>() < p);
                        let sid = format!("s{}", s + 1);
                        let did = format!("{sid}d{}", d + 1);
                        let cid = format!("{did}c{}", c + 1);
                        let mid = format!("{cid}m{}", m + 1);
                        records.push(BirthRecord {
                            outcome,
                            birth_year: year,
                            mother_id: mid,
                            cluster_id: cid,
                            district_id: did,
                            state_id: sid,
                            covariates,
                        });
                        eta.push(lp);
                    }
                }
            }
        }
    }
    let dataset = Dataset::new(schema, records)?;
    let risks = eta.iter().map(|&x| logistic(x)).collect();
    Ok((
        dataset,
        TrueRisks {
            risks,
            linear_predictor: eta,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn spec(intercept: f64, variance: f64) -> SyntheticSpec {
        SyntheticSpec {
            nesting: NestingCounts {
                states: 2,
                districts_per_state: 2,
                clusters_per_district: 3,
                mothers_per_cluster: 5,
                births_per_mother: (1, 3),
            },
            years: vec![1990, 1991],
            year_weights: None,
            year_window: None,
            intercept,
            year_effects: BTreeMap::new(),
            covariates: vec![SyntheticCovariate {
                name: "wealth".into(),
                rule: CovariateRule::Categorical {
                    levels: vec!["Q1".into(), "Q2".into()],
                    effects: vec![0.0, 0.0],
                    probs: vec![0.5, 0.5],
                    probs_by_year: BTreeMap::new(),
                },
            }],
            variances: VarianceComponents {
                mother: variance,
                cluster: variance,
                district: [[variance, 0.0], [0.0, variance]],
                state: [[variance, 0.0], [0.0, variance]],
            },
        }
    }

    #[test]
    fn zero_everything_gives_one_half() {
        let (ds, truth) = generate_synthetic(&spec(0.0, 0.0), 1).unwrap();
        assert!(!ds.is_empty());
        assert!(truth.risks.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn intercept_only_gives_logistic_of_intercept() {
        let (_, truth) = generate_synthetic(&spec(-2.2, 0.0), 3).unwrap();
        let expected = 1.0 / (1.0 + 2.2f64.exp());
        assert!((expected - 0.0998).abs() < 1e-4);
        assert!(truth.risks.iter().all(|&p| (p - expected).abs() < 1e-15));
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let s = spec(-1.0, 0.3);
        let (a, ta) = generate_synthetic(&s, 42).unwrap();
        let (b, tb) = generate_synthetic(&s, 42).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(ta, tb);
        let (c, _) = generate_synthetic(&s, 43).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn empirical_death_rate_tracks_true_mean() {
        let mut s = spec(-1.5, 0.2);
        s.nesting.mothers_per_cluster = 400;
        let (ds, truth) = generate_synthetic(&s, 9).unwrap();
        let n = ds.len() as f64;
        let rate = ds.records().iter().map(|r| r.outcome as f64).sum::<f64>() / n;
        let mean_p = truth.risks.iter().sum::<f64>() / n;
        let se = (truth.risks.iter().map(|p| p * (1.0 - p)).sum::<f64>()).sqrt() / n;
        assert!((rate - mean_p).abs() < 3.0 * se, "rate {rate} mean {mean_p} se {se}");
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let mut s = spec(0.0, 0.1);
        s.variances.state = [[0.1, 1.0], [1.0, 0.1]];
        assert!(generate_synthetic(&s, 1).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let mut s = spec(-2.0, 0.1);
        if let CovariateRule::Categorical { probs_by_year, .. } = &mut s.covariates[0].rule {
            probs_by_year.insert(1991, vec![0.2, 0.8]);
        }
        s.year_effects.insert(1991, -0.3);
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains(r#""probs_by_year":{"1991":[0.2,0.8]}"#), "{text}");
        assert_eq!(SyntheticSpec::from_json(&text).unwrap(), s);
        let bad = text.replace(r#""1991":[0.2"#, r#""later":[0.2"#);
        assert!(SyntheticSpec::from_json(&bad).is_err());
    }
}
