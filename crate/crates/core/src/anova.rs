//! Law-of-total-variance decomposition of risks across the groups of one
//! categorical labeling, and the posterior of `R² = between / total`,
//! optionally per birth year.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{CovariateValue, Dataset, Unit};
use crate::error::{Error, Result};
use crate::model::PosteriorRisks;
use crate::parallel;
use crate::stats::Interval;

/// Assignment of every birth in a dataset to one of `n_groups` groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupLabeling {
    pub name: String,
    pub labels: Vec<usize>,
    pub n_groups: usize,
    pub group_names: Vec<String>,
}

impl GroupLabeling {
    pub fn new(name: &str, labels: Vec<usize>, group_names: Vec<String>) -> Result<Self> {
        let n_groups = group_names.len();
        if let Some(l) = labels.iter().find(|&&l| l >= n_groups) {
            return Err(Error::InvalidInput(format!("label {l} outside {n_groups} groups")));
        }
        Ok(GroupLabeling {
            name: name.to_string(),
            labels,
            n_groups,
            group_names,
        })
    }

    /// Groups by a categorical covariate, a unit id (`mother`, `cluster`,
    /// `district`, `state`) or the birth year (`year`).
    pub fn from_field(dataset: &Dataset, field: &str) -> Result<Self> {
        let recs = dataset.records();
        if field == "year" {
            let years = dataset.years();
            let pos: BTreeMap<i32, usize> = years.iter().enumerate().map(|(k, &y)| (y, k)).collect();
            let labels = recs.iter().map(|r| pos[&r.birth_year]).collect();
            return Self::new(field, labels, years.iter().map(|y| y.to_string()).collect());
        }
        if let Some(unit) = Unit::ALL.into_iter().find(|u| u.name() == field) {
            let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
            for r in recs {
                let next = ids.len();
                ids.entry(r.unit_id(unit)).or_insert(next);
            }
            let labels = recs.iter().map(|r| ids[r.unit_id(unit)]).collect();
            let mut names = vec![String::new(); ids.len()];
            for (id, k) in ids {
                names[k] = id.to_string();
            }
            return Self::new(field, labels, names);
        }
        let (k, cov) = dataset
            .covariate(field)
            .ok_or_else(|| Error::UnknownField(field.to_string()))?;
        let levels = cov.levels().ok_or_else(|| {
            Error::InvalidInput(format!("`{field}` is numeric; group by a categorical covariate"))
        })?;
        let labels = recs
            .iter()
            .map(|r| match r.covariates[k] {
                CovariateValue::Level(l) => l,
                CovariateValue::Number(_) => unreachable!(),
            })
            .collect();
        Self::new(field, labels, levels.to_vec())
    }

    /// Labels of the given rows.
    pub fn labels_of(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&r| self.labels[r]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecomposition {
    pub within: f64,
    pub between: f64,
    pub total: f64,
}

impl VarianceDecomposition {
    /// Share of the total variance between groups; 0 when the total is 0.
    pub fn r2(&self) -> f64 {
        if self.total > 0.0 {
            (self.between / self.total).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Population-variance decomposition `total = within + between`, where
/// `between` is the size-weighted variance of group means and `within` the
/// size-weighted mean of group variances.
pub fn variance_decompose(risks: &[f64], labels: &[usize], n_groups: usize) -> Result<VarianceDecomposition> {
    if risks.len() < 2 {
        return Err(Error::InvalidInput("variance decomposition needs at least 2 births".into()));
    }
    if labels.len() != risks.len() {
        return Err(Error::InvalidInput("one label per birth required".into()));
    }
    let n = risks.len() as f64;
    let mut sums = vec![0.0; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (&x, &g) in risks.iter().zip(labels) {
        if g >= n_groups {
            return Err(Error::InvalidInput(format!("label {g} outside {n_groups} groups")));
        }
        sums[g] += x;
        counts[g] += 1;
    }
    let mean = sums.iter().sum::<f64>() / n;
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let mut within = 0.0;
    let mut total = 0.0;
    for (&x, &g) in risks.iter().zip(labels) {
        within += (x - means[g]).powi(2);
        total += (x - mean).powi(2);
    }
    let between: f64 = means
        .iter()
        .zip(&counts)
        .map(|(m, &c)| c as f64 * (m - mean).powi(2))
        .sum();
    Ok(VarianceDecomposition {
        within: within / n,
        between: between / n,
        total: total / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Posterior {
    pub covariate: String,
    pub year: Option<i32>,
    pub draws: Vec<f64>,
    pub summary: Interval,
}

/// `R²` per draw for the births in `rows`.
pub fn r2_posterior(p: &PosteriorRisks, labels: &GroupLabeling, rows: &[usize]) -> Result<R2Posterior> {
    if p.n_births() != labels.labels.len() {
        return Err(Error::InvalidInput("labeling does not cover the posterior births".into()));
    }
    let sub = labels.labels_of(rows);
    let draws = parallel::try_map_range(p.n_draws(), |l| {
        variance_decompose(&p.draw_subset(l, rows), &sub, labels.n_groups).map(|d| d.r2())
    })?;
    Ok(R2Posterior {
        covariate: labels.name.clone(),
        year: None,
        summary: Interval::from_draws(&draws),
        draws,
    })
}

/// Separate `R²` posteriors for the births of each year among `rows`.
/// Years with fewer than 2 births are skipped with a warning.
pub fn r2_by_year(
    p: &PosteriorRisks,
    dataset: &Dataset,
    labels: &GroupLabeling,
    rows: &[usize],
) -> Result<Vec<R2Posterior>> {
    let mut by_year: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for &r in rows {
        by_year.entry(dataset.records()[r].birth_year).or_default().push(r);
    }
    let mut out = Vec::with_capacity(by_year.len());
    for (year, births) in by_year {
        if births.len() < 2 {
            log::warn!("skipping year {year}: only {} birth", births.len());
            continue;
        }
        let mut r = r2_posterior(p, labels, &births)?;
        r.year = Some(year);
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub year: i32,
    pub covariate: String,
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Long-format `(year, covariate, median, lo, hi)` table.
pub fn trend_table(r2_by_year: &[R2Posterior]) -> Result<Vec<TrendRow>> {
    let years: std::collections::BTreeSet<i32> = r2_by_year.iter().filter_map(|r| r.year).collect();
    if years.len() < 2 {
        return Err(Error::InvalidInput("a trend table needs at least 2 years".into()));
    }
    let mut rows: Vec<TrendRow> = r2_by_year
        .iter()
        .filter_map(|r| {
            r.year.map(|year| TrendRow {
                year,
                covariate: r.covariate.clone(),
                median: r.summary.median,
                lo: r.summary.lo,
                hi: r.summary.hi,
            })
        })
        .collect();
    rows.sort_by(|a, b| (a.covariate.as_str(), a.year).cmp(&(b.covariate.as_str(), b.year)));
    Ok(rows)
}

pub fn write_trend_csv<W: Write>(rows: &[TrendRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand::seq::SliceRandom;

    #[test]
    fn two_constant_groups() {
        let d = variance_decompose(&[0.1, 0.1, 0.3, 0.3], &[0, 0, 1, 1], 2).unwrap();
        assert!(d.within.abs() < 1e-15);
        assert!((d.between - 0.01).abs() < 1e-15);
        assert!((d.r2() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_group_explains_nothing() {
        let d = variance_decompose(&[0.1, 0.2, 0.4], &[0, 0, 0], 1).unwrap();
        assert!(d.between.abs() < 1e-18);
        assert_eq!(d.r2(), 0.0);
    }

    #[test]
    fn single_birth_rejected() {
        assert!(variance_decompose(&[0.1], &[0], 1).is_err());
        assert!(variance_decompose(&[0.1, 0.2], &[0, 3], 2).is_err());
    }

    #[test]
    fn random_labels_explain_almost_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..50_000).map(|_| rng.random_range(0.01..0.3)).collect();
        let g: Vec<usize> = (0..50_000).map(|_| rng.random_range(0..5)).collect();
        assert!(variance_decompose(&x, &g, 5).unwrap().r2() < 0.001);
    }

    #[test]
    fn permuted_labels_explain_less_than_true_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g: Vec<usize> = (0..400).map(|i| i % 4).collect();
        let x: Vec<f64> = g
            .iter()
            .map(|&k| 0.05 + 0.02 * k as f64 + rng.random_range(0.0..0.05))
            .collect();
        let observed = variance_decompose(&x, &g, 4).unwrap().r2();
        let mut below = 0;
        for _ in 0..200 {
            let mut perm = g.clone();
            perm.shuffle(&mut rng);
            below += usize::from(variance_decompose(&x, &perm, 4).unwrap().r2() < observed);
        }
        assert!(below >= 190, "{below}/200");
    }

    #[test]
    fn trend_table_layout() {
        let mk = |year| R2Posterior {
            covariate: "wealth".into(),
            year: Some(year),
            draws: vec![0.1, 0.2, 0.3],
            summary: Interval::from_draws(&[0.1, 0.2, 0.3]),
        };
        let t = trend_table(&[mk(2001), mk(2000)]).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].year, 2000);
        assert!(t.iter().all(|r| r.lo <= r.median && r.median <= r.hi));
        assert!(trend_table(&[mk(2000)]).is_err());
        let mut buf = Vec::new();
        write_trend_csv(&t, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("year,covariate,median,lo,hi"));
    }

    proptest! {
        #[test]
        fn additivity_and_bounds(
            pairs in prop::collection::vec((0.0001f64..0.9999, 0usize..6), 2..300)
        ) {
            let (x, g): (Vec<f64>, Vec<usize>) = pairs.into_iter().unzip();
            let d = variance_decompose(&x, &g, 6).unwrap();
            prop_assert!((d.within + d.between - d.total).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&d.r2()));
        }

        #[test]
        fn refining_never_lowers_between(
            pairs in prop::collection::vec((0.0001f64..0.9999, 0usize..4, 0usize..3), 2..200)
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let coarse: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let fine: Vec<usize> = pairs.iter().map(|p| p.1 * 3 + p.2).collect();
            let a = variance_decompose(&x, &coarse, 4).unwrap();
            let b = variance_decompose(&x, &fine, 12).unwrap();
            prop_assert!(b.between >= a.between - 1e-15);
        }
    }
}
