//! Counterfactual ("adjusted") risk distributions and distribution-level
//! decompositions of the difference between two populations.
//!
//! A population is a set of births (dataset rows). Risks are
//! `G_beta(M)`: coefficients `beta` applied to covariate population `M`.
//! The coefficients of a population are the fixed effects evaluated at its
//! birth years, so swapping coefficients means placing a record in a birth
//! year drawn from the other population. Random effects always stay attached
//! to each record's own mother, cluster, district and state.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compare::{kde_with, l1_distance, per_draw_compare, DrawComparison, KdeOptions, Metric};
use crate::data::CovariateValue;
use crate::error::{Error, Result};
use crate::measures::{RiskDistribution, Statistic};
use crate::model::{CounterfactualRows, FittedModel, TermSource};
use crate::stats::Interval;

/// `b * source`, with `b = statistic(target) / statistic(source)`. When that
/// ratio exceeds 1 the roles are swapped so the scaled values stay in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleAdjustment {
    pub b: f64,
    pub statistic: Statistic,
    /// True when the target was scaled toward the source instead.
    pub swapped: bool,
    pub adjusted: RiskDistribution,
}

pub fn scale_adjust(
    source: &RiskDistribution,
    target: &RiskDistribution,
    statistic: Statistic,
) -> Result<ScaleAdjustment> {
    let s = source.statistic(statistic);
    let t = target.statistic(statistic);
    let name = match statistic {
        Statistic::Mean => "mean",
        Statistic::Median => "median",
    };
    if s <= 0.0 || t <= 0.0 {
        return Err(Error::ZeroStatistic(name));
    }
    let (b, swapped, scaled) = if t <= s { (t / s, false, source) } else { (s / t, true, target) };
    Ok(ScaleAdjustment {
        b,
        statistic,
        swapped,
        adjusted: scaled.scaled(b)?,
    })
}

/// A counterfactual population ready to be evaluated per draw.
#[derive(Debug, Clone)]
pub struct Counterfactual {
    pub label: String,
    pub rows: CounterfactualRows,
    pub warnings: Vec<String>,
}

impl Counterfactual {
    pub fn draw(&self, model: &FittedModel, l: usize) -> Result<RiskDistribution> {
        RiskDistribution::new(model.counterfactual_risks(&self.rows, l))
    }
}

fn check_rows(model: &FittedModel, rows: &[usize], what: &str) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("{what} population is empty")));
    }
    if let Some(r) = rows.iter().find(|&&r| r >= model.dataset.len()) {
        return Err(Error::InvalidInput(format!("{what} row {r} is outside the dataset")));
    }
    Ok(())
}

fn birth_year_term(model: &FittedModel) -> Option<usize> {
    model
        .design
        .spec
        .terms
        .iter()
        .position(|t| t.source == TermSource::BirthYear)
}

/// `G_coef(M_cov)`: the births in `covariate_rows`, each placed in a birth
/// year drawn with replacement from `coefficient_rows`.
pub fn coefficient_swap(
    model: &FittedModel,
    covariate_rows: &[usize],
    coefficient_rows: &[usize],
    seed: u64,
) -> Result<Counterfactual> {
    check_rows(model, covariate_rows, "covariate")?;
    check_rows(model, coefficient_rows, "coefficient")?;
    let recs = model.dataset.records();
    let (mut values, _) = model.observed_terms(covariate_rows);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let years: Vec<i32> = covariate_rows
        .iter()
        .map(|_| recs[coefficient_rows[rng.random_range(0..coefficient_rows.len())]].birth_year)
        .collect();
    if let Some(k) = birth_year_term(model) {
        for (v, &y) in values.iter_mut().zip(&years) {
            v[k] = CovariateValue::Number(y as f64);
        }
    }
    let rows = model.counterfactual(covariate_rows, &values, &years);
    let mut warnings = Vec::new();
    if rows.clamped > 0 {
        warnings.push(format!("{} values clamped into the fitted support", rows.clamped));
    }
    Ok(Counterfactual {
        label: "coefficients".into(),
        rows,
        warnings,
    })
}

/// Population `base` with covariate `covariate` resampled (with replacement,
/// one donor per base birth) from population `donor`, either marginally or
/// within cells of the categorical covariates in `conditional_on`. Empty
/// donor cells fall back to the donor marginal with a warning.
pub fn covariate_swap(
    model: &FittedModel,
    base: &[usize],
    donor: &[usize],
    covariate: &str,
    conditional_on: &[String],
    seed: u64,
) -> Result<Counterfactual> {
    check_rows(model, base, "base")?;
    check_rows(model, donor, "donor")?;
    let ds = &model.dataset;
    let (cov_idx, _) = ds
        .covariate(covariate)
        .ok_or_else(|| Error::UnknownField(covariate.to_string()))?;
    let mut cond_idx = Vec::with_capacity(conditional_on.len());
    for name in conditional_on {
        let (k, c) = ds.covariate(name).ok_or_else(|| Error::UnknownField(name.clone()))?;
        if !c.is_categorical() {
            return Err(Error::InvalidInput(format!(
                "conditioning covariate `{name}` must be categorical"
            )));
        }
        if k == cov_idx {
            return Err(Error::InvalidInput(format!("`{name}` cannot condition on itself")));
        }
        cond_idx.push(k);
    }
    let recs = ds.records();
    let cell = |row: usize| -> Vec<usize> {
        cond_idx
            .iter()
            .map(|&k| match recs[row].covariates[k] {
                CovariateValue::Level(l) => l,
                CovariateValue::Number(_) => unreachable!(),
            })
            .collect()
    };
    let mut cells: HashMap<Vec<usize>, Vec<usize>> = HashMap::new();
    for &r in donor {
        cells.entry(cell(r)).or_default().push(r);
    }

    let mut warnings = Vec::new();
    let term = model
        .design
        .spec
        .terms
        .iter()
        .position(|t| t.source == TermSource::Covariate { index: cov_idx });
    if term.is_none() {
        let msg = format!("`{covariate}` is not in the model; swapping it changes nothing");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let (mut values, years) = model.observed_terms(base);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut empty_cells = 0;
    for (v, &row) in values.iter_mut().zip(base) {
        let pool = match cells.get(&cell(row)) {
            Some(p) => p.as_slice(),
            None => {
                empty_cells += 1;
                donor
            }
        };
        let pick = pool[rng.random_range(0..pool.len())];
        if let Some(k) = term {
            v[k] = recs[pick].covariates[cov_idx];
        }
    }
    if empty_cells > 0 {
        let msg = format!(
            "{empty_cells} base births fell in conditioning cells with no donors; used the donor marginal"
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let rows = model.counterfactual(base, &values, &years);
    if rows.clamped > 0 {
        warnings.push(format!("{} values clamped into the fitted support", rows.clamped));
    }
    Ok(Counterfactual {
        label: covariate.to_string(),
        rows,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriangleOp {
    AbsoluteMean,
    /// `|mu_a - mu_b| / mu_b`
    RelativeMean,
    L1,
}

impl fmt::Display for TriangleOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TriangleOp::AbsoluteMean => "absolute_mean",
            TriangleOp::RelativeMean => "relative_mean",
            TriangleOp::L1 => "l1",
        })
    }
}

impl FromStr for TriangleOp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute_mean" => Ok(TriangleOp::AbsoluteMean),
            "relative_mean" => Ok(TriangleOp::RelativeMean),
            "l1" => Ok(TriangleOp::L1),
            _ => Err(Error::InvalidInput(format!(
                "unknown operator `{s}` (absolute_mean, relative_mean, l1)"
            ))),
        }
    }
}

/// `L(P0, P1) <= L(P0, PA) + L(PA, P1)` with its slack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangleReport {
    pub op: TriangleOp,
    pub d01: f64,
    pub d0a: f64,
    pub da1: f64,
    /// `d0a + da1 - d01`
    pub slack: f64,
    pub holds: bool,
    /// For the relative mean difference: whether `mu_A` lies between `mu_0`
    /// and `mu_1`, the condition under which the decomposition is valid.
    pub ordering_ok: Option<bool>,
}

pub fn triangle_report(
    p0: &RiskDistribution,
    pa: &RiskDistribution,
    p1: &RiskDistribution,
    op: TriangleOp,
    opts: &KdeOptions,
) -> Result<TriangleReport> {
    let (m0, ma, m1) = (p0.mean(), pa.mean(), p1.mean());
    let (d01, d0a, da1, ordering_ok) = match op {
        TriangleOp::AbsoluteMean => ((m0 - m1).abs(), (m0 - ma).abs(), (ma - m1).abs(), None),
        TriangleOp::RelativeMean => {
            let ok = (m0 <= ma && ma <= m1) || (m1 <= ma && ma <= m0);
            ((m0 - m1).abs() / m1, (m0 - ma).abs() / ma, (ma - m1).abs() / m1, Some(ok))
        }
        TriangleOp::L1 => {
            let (f0, fa, f1) = (kde_with(p0, opts)?, kde_with(pa, opts)?, kde_with(p1, opts)?);
            (l1_distance(&f0, &f1)?, l1_distance(&f0, &fa)?, l1_distance(&fa, &f1)?, None)
        }
    };
    let slack = d0a + da1 - d01;
    Ok(TriangleReport {
        op,
        d01,
        d0a,
        da1,
        slack,
        holds: slack >= -1e-12,
        ordering_ok,
    })
}

/// One line of a decomposition table: how close an adjusted population
/// gets to the target, per draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRow {
    pub adjustment: String,
    pub kl: Interval,
    pub l1: Interval,
    pub kl_draws: Vec<f64>,
    pub l1_draws: Vec<f64>,
    pub warnings: Vec<String>,
}

fn compare_to_target(
    model: &FittedModel,
    opts: &KdeOptions,
    target: &[usize],
    adjusted: &(dyn Fn(usize) -> Result<RiskDistribution> + Sync),
) -> Result<(DrawComparison, DrawComparison)> {
    let l = model.n_draws();
    let tgt = |d: usize| RiskDistribution::from_draw(&model.risks, d, target);
    let kl = per_draw_compare(l, opts, Metric::Kl, adjusted, tgt)?;
    let l1 = per_draw_compare(l, opts, Metric::L1, adjusted, tgt)?;
    Ok((kl, l1))
}

/// Decomposition of the difference between `base` and `target`: the
/// unadjusted divergence, the coefficient swap `G_target(M_base)`, and one
/// single-covariate swap per entry of `covariates`. KL is computed as
/// `KL(adjusted || target)`.
pub fn decompose(
    model: &FittedModel,
    base: &[usize],
    target: &[usize],
    covariates: &[String],
    conditional_on: &[String],
    opts: &KdeOptions,
    seed: u64,
) -> Result<Vec<DecompositionRow>> {
    check_rows(model, base, "base")?;
    check_rows(model, target, "target")?;
    let mut out = Vec::with_capacity(covariates.len() + 2);
    let row = |name: String, pair: (DrawComparison, DrawComparison), warnings: Vec<String>| {
        DecompositionRow {
            adjustment: name,
            kl: pair.0.summary,
            l1: pair.1.summary,
            kl_draws: pair.0.values,
            l1_draws: pair.1.values,
            warnings,
        }
    };
    let unadjusted = |d: usize| RiskDistribution::from_draw(&model.risks, d, base);
    out.push(row("none".into(), compare_to_target(model, opts, target, &unadjusted)?, vec![]));
    let coef = coefficient_swap(model, base, target, seed)?;
    let pair = compare_to_target(model, opts, target, &|d| coef.draw(model, d))?;
    out.push(row(coef.label.clone(), pair, coef.warnings.clone()));
    for (k, name) in covariates.iter().enumerate() {
        let cond: Vec<String> = conditional_on.iter().filter(|c| *c != name).cloned().collect();
        let cf = covariate_swap(model, base, target, name, &cond, seed.wrapping_add(k as u64 + 1))?;
        let pair = compare_to_target(model, opts, target, &|d| cf.draw(model, d))?;
        out.push(row(format!("covariate:{name}"), pair, cf.warnings.clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::quantile;

    fn dist(v: &[f64]) -> RiskDistribution {
        RiskDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn identity_when_target_equals_source() {
        let s = dist(&[0.1, 0.2, 0.3]);
        for stat in [Statistic::Mean, Statistic::Median] {
            let a = scale_adjust(&s, &s, stat).unwrap();
            assert_eq!(a.b, 1.0);
            assert_eq!(a.adjusted, s);
        }
    }

    #[test]
    fn exact_scaling_family() {
        let s: Vec<f64> = (0..50).map(|i| 0.2 + 0.2 * i as f64 / 49.0).collect();
        let t: Vec<f64> = s.iter().map(|v| 0.5 * v).collect();
        let a = scale_adjust(&dist(&s), &dist(&t), Statistic::Median).unwrap();
        assert!((a.b - 0.5).abs() < 1e-15);
        for (x, y) in a.adjusted.values().iter().zip(&t) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_ratio_and_orientation() {
        let a = scale_adjust(&dist(&[0.2, 0.4]), &dist(&[0.1, 0.2]), Statistic::Mean).unwrap();
        assert!((a.b - 0.5).abs() < 1e-15);
        assert!(!a.swapped);
        assert!((a.adjusted.mean() - 0.15).abs() < 1e-15);
        let r = scale_adjust(&dist(&[0.1, 0.2]), &dist(&[0.2, 0.4]), Statistic::Mean).unwrap();
        assert!(r.swapped && r.b <= 1.0);
    }

    #[test]
    fn scaled_quantiles_are_scaled() {
        let s: Vec<f64> = (1..=37).map(|i| (i as f64 / 40.0).powi(2)).collect();
        let t: Vec<f64> = s.iter().map(|v| v * 0.3 + 0.01).collect();
        let a = scale_adjust(&dist(&s), &dist(&t), Statistic::Mean).unwrap();
        for q in [0.1, 0.5, 0.9] {
            let lhs = quantile(a.adjusted.values(), q);
            let rhs = a.b * quantile(&s, q);
            assert!((lhs - rhs).abs() < 1e-15);
        }
    }

    #[test]
    fn triangle_cases() {
        let opts = KdeOptions::default();
        let p0 = dist(&[0.05, 0.1, 0.12, 0.2]);
        let p1 = dist(&[0.2, 0.25, 0.3, 0.33]);
        let pa = dist(&[0.1, 0.2, 0.2, 0.3]);
        for op in [TriangleOp::AbsoluteMean, TriangleOp::RelativeMean, TriangleOp::L1] {
            let r = triangle_report(&p0, &p0, &p1, op, &opts).unwrap();
            assert!(r.slack.abs() < 1e-12, "{op}");
            assert!(triangle_report(&p0, &pa, &p1, op, &opts).unwrap().d01 > 0.0);
        }
        let l1 = triangle_report(&p0, &pa, &p1, TriangleOp::L1, &opts).unwrap();
        assert!(l1.holds);

        let m0 = dist(&[0.1]);
        let ma = dist(&[0.3]);
        let m1 = dist(&[0.2]);
        let r = triangle_report(&m0, &ma, &m1, TriangleOp::RelativeMean, &opts).unwrap();
        assert_eq!(r.ordering_ok, Some(false));
        let r = triangle_report(&m0, &m1, &ma, TriangleOp::RelativeMean, &opts).unwrap();
        assert_eq!(r.ordering_ok, Some(true));
    }
}
