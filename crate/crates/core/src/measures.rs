//! Income-inequality measures applied to distributions of mortality risk,
//! the complement (survival) symmetry audit, and the beta-family simulation
//! table.
//!
//! Ratio-based measures share the form `sum_i w_i f(r_i)` with `r_i = pi_i / mu`:
//!
//! | measure  | `f(r)`       |
//! |----------|--------------|
//! | cv²      | `(r - 1)^2`  |
//! | Theil    | `r log r`    |
//!
//! The variance of logs is the weighted variance of `log r`, and the Gini
//! index is `(1/2) sum_i sum_j w_i w_j |r_i - r_j|`.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PosteriorRisks;
use crate::parallel;
use crate::stats::Interval;

/// Largest representable value below 1 used when complementing risks.
const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

/// A (weighted) sample of risks strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct RiskDistribution {
    values: Vec<f64>,
    /// Normalized to sum to 1; `None` means uniform.
    weights: Option<Vec<f64>>,
}

impl RiskDistribution {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("risk distribution is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::InvalidInput(format!("risk {v} is not strictly inside (0, 1)")));
        }
        Ok(RiskDistribution { values, weights: None })
    }

    pub fn with_weights(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != values.len() {
            return Err(Error::InvalidInput("weights and values differ in length".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidInput("weights sum to zero".into()));
        }
        let mut d = Self::new(values)?;
        d.weights = Some(weights.into_iter().map(|w| w / total).collect());
        Ok(d)
    }

    /// Risks of the selected births under posterior draw `l`.
    pub fn from_draw(p: &PosteriorRisks, l: usize, rows: &[usize]) -> Result<Self> {
        Self::new(p.draw_subset(l, rows))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Normalized weight of value `i`.
    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.values.len() as f64,
        }
    }

    /// Weighted sum of `f(value)`.
    fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        match &self.weights {
            Some(w) => self.values.iter().zip(w).map(|(&v, &w)| w * f(v)).sum(),
            None => self.values.iter().map(|&v| f(v)).sum::<f64>() / self.values.len() as f64,
        }
    }

    pub fn mean(&self) -> f64 {
        self.expect(|v| v)
    }

    /// Population standard deviation.
    pub fn sd(&self) -> f64 {
        let m = self.mean();
        self.expect(|v| (v - m) * (v - m)).sqrt()
    }

    /// Sample median (interpolated) for uniform weights; weighted median
    /// (smallest value with cumulative weight at least 1/2) otherwise.
    pub fn median(&self) -> f64 {
        match &self.weights {
            None => crate::stats::median(&self.values),
            Some(w) => {
                let order = self.sorted_order();
                let mut cum = 0.0;
                for &i in &order {
                    cum += w[i];
                    if cum >= 0.5 {
                        return self.values[i];
                    }
                }
                self.values[*order.last().unwrap()]
            }
        }
    }

    pub fn statistic(&self, s: Statistic) -> f64 {
        match s {
            Statistic::Mean => self.mean(),
            Statistic::Median => self.median(),
        }
    }

    /// Survival probabilities `1 - pi`, kept strictly below 1.
    pub fn complement(&self) -> RiskDistribution {
        RiskDistribution {
            values: self.values.iter().map(|v| (1.0 - v).min(ONE_BELOW)).collect(),
            weights: self.weights.clone(),
        }
    }

    /// Every value multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<RiskDistribution> {
        let mut d = Self::new(self.values.iter().map(|v| v * c).collect())?;
        d.weights = self.weights.clone();
        Ok(d)
    }

    fn sorted_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        order
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    Median,
}

impl FromStr for Statistic {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Statistic::Mean),
            "median" => Ok(Statistic::Median),
            _ => Err(Error::InvalidInput(format!("unknown statistic `{s}` (mean, median)"))),
        }
    }
}

/// Weighted mean of `f(pi_i / mu)`.
pub fn common_form(dist: &RiskDistribution, f: impl Fn(f64) -> f64) -> Result<f64> {
    let mu = dist.mean();
    if mu <= 0.0 {
        return Err(Error::ZeroStatistic("mean"));
    }
    Ok(dist.expect(|v| f(v / mu)))
}

/// Squared coefficient of variation.
pub fn cv2(dist: &RiskDistribution) -> Result<f64> {
    common_form(dist, |r| (r - 1.0) * (r - 1.0))
}

pub fn cv(dist: &RiskDistribution) -> Result<f64> {
    cv2(dist).map(f64::sqrt)
}

pub fn theil(dist: &RiskDistribution) -> Result<f64> {
    common_form(dist, |r| r * r.ln())
}

/// Variance of `log r`, which equals the variance of `log pi`.
pub fn var_logs(dist: &RiskDistribution) -> Result<f64> {
    if let Some(v) = dist.values.iter().find(|v| **v <= 0.0) {
        return Err(Error::InvalidInput(format!("variance of logs needs positive values, got {v}")));
    }
    let m = dist.expect(f64::ln);
    Ok(dist.expect(|v| (v.ln() - m) * (v.ln() - m)))
}

/// Gini index via the sorted cumulative-weight identity
/// `G = sum_i w_i r_i (W_{<i} - W_{>i})`, values in ascending order.
pub fn gini(dist: &RiskDistribution) -> Result<f64> {
    let mu = dist.mean();
    if mu <= 0.0 {
        return Err(Error::ZeroStatistic("mean"));
    }
    let mut g = 0.0;
    match &dist.weights {
        None => {
            let mut sorted = dist.values.clone();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len() as f64;
            for (i, v) in sorted.iter().enumerate() {
                // W_{<i} - W_{>i} = (i - (n - 1 - i)) / n
                g += v * (2.0 * i as f64 - (n - 1.0));
            }
            g /= n * n * mu;
        }
        Some(w) => {
            let order = dist.sorted_order();
            let mut below = 0.0;
            for &i in &order {
                let above = 1.0 - below - w[i];
                g += w[i] * dist.values[i] / mu * (below - above);
                below += w[i];
            }
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Mean,
    Sd,
    Cv,
    Cv2,
    Theil,
    VarLogs,
    Gini,
}

impl Measure {
    pub const ALL: [Measure; 7] = [
        Measure::Mean,
        Measure::Sd,
        Measure::Cv,
        Measure::Cv2,
        Measure::Theil,
        Measure::VarLogs,
        Measure::Gini,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Mean => "mean",
            Measure::Sd => "sd",
            Measure::Cv => "cv",
            Measure::Cv2 => "cv2",
            Measure::Theil => "theil",
            Measure::VarLogs => "var_logs",
            Measure::Gini => "gini",
        }
    }

    pub fn compute(self, dist: &RiskDistribution) -> Result<f64> {
        match self {
            Measure::Mean => Ok(dist.mean()),
            Measure::Sd => Ok(dist.sd()),
            Measure::Cv => cv(dist),
            Measure::Cv2 => cv2(dist),
            Measure::Theil => theil(dist),
            Measure::VarLogs => var_logs(dist),
            Measure::Gini => gini(dist),
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Measure::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown measure `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureSet {
    pub mean: f64,
    pub sd: f64,
    pub cv: f64,
    pub cv2: f64,
    pub theil: f64,
    pub var_logs: f64,
    pub gini: f64,
}

impl MeasureSet {
    pub fn compute(dist: &RiskDistribution) -> Result<Self> {
        let cv2 = cv2(dist)?;
        Ok(MeasureSet {
            mean: dist.mean(),
            sd: dist.sd(),
            cv: cv2.sqrt(),
            cv2,
            theil: theil(dist)?,
            var_logs: var_logs(dist)?,
            gini: gini(dist)?,
        })
    }

    pub fn get(&self, m: Measure) -> f64 {
        match m {
            Measure::Mean => self.mean,
            Measure::Sd => self.sd,
            Measure::Cv => self.cv,
            Measure::Cv2 => self.cv2,
            Measure::Theil => self.theil,
            Measure::VarLogs => self.var_logs,
            Measure::Gini => self.gini,
        }
    }
}

/// Every measure on the mortality risks and on their complement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub mortality: MeasureSet,
    pub survival: MeasureSet,
}

impl MeasureReport {
    pub fn compute(dist: &RiskDistribution) -> Result<Self> {
        Ok(MeasureReport {
            mortality: MeasureSet::compute(dist)?,
            survival: MeasureSet::compute(&dist.complement())?,
        })
    }
}

/// Which of two distributions a measure judges more unequal (for the mean:
/// worse off, i.e. higher mortality or lower survival).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conclusion {
    First,
    Second,
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetryAudit {
    pub measure: Measure,
    pub mortality: [f64; 2],
    pub survival: [f64; 2],
    pub mortality_conclusion: Conclusion,
    pub survival_conclusion: Conclusion,
    pub agrees: bool,
}

fn larger(a: f64, b: f64) -> Conclusion {
    match a.partial_cmp(&b) {
        Some(std::cmp::Ordering::Greater) => Conclusion::First,
        Some(std::cmp::Ordering::Less) => Conclusion::Second,
        _ => Conclusion::Tie,
    }
}

/// Compares two distributions with `measure` on the mortality scale and on
/// the survival scale, and records whether both scales reach the same
/// conclusion about which distribution is more unequal.
pub fn symmetry_audit(
    dist0: &RiskDistribution,
    dist1: &RiskDistribution,
    measure: Measure,
) -> Result<SymmetryAudit> {
    let mortality = [measure.compute(dist0)?, measure.compute(dist1)?];
    let survival = [
        measure.compute(&dist0.complement())?,
        measure.compute(&dist1.complement())?,
    ];
    let mortality_conclusion = larger(mortality[0], mortality[1]);
    let survival_conclusion = match measure {
        Measure::Mean => larger(survival[1], survival[0]),
        _ => larger(survival[0], survival[1]),
    };
    Ok(SymmetryAudit {
        measure,
        mortality,
        survival,
        mortality_conclusion,
        survival_conclusion,
        agrees: mortality_conclusion == survival_conclusion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub alpha: f64,
    pub beta: f64,
    pub analytic_mean: f64,
    pub report: MeasureReport,
}

const BETA_CHUNK: usize = 1 << 16;

/// Draws `n` values from Beta(alpha, beta), clamped strictly inside (0, 1).
/// Chunk `k` uses its own ChaCha stream, so the sample does not depend on the
/// thread count.
pub fn beta_sample(alpha: f64, beta: f64, n: usize, seed: u64, stream: u64) -> Result<Vec<f64>> {
    let dist = Beta::new(alpha, beta)
        .map_err(|e| Error::InvalidInput(format!("invalid beta({alpha}, {beta}): {e}")))?;
    let chunks = n.div_ceil(BETA_CHUNK);
    let parts = parallel::map_range(chunks, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((stream << 32) | k as u64);
        let len = BETA_CHUNK.min(n - k * BETA_CHUNK);
        (0..len)
            .map(|_| dist.sample(&mut rng).clamp(f64::MIN_POSITIVE, ONE_BELOW))
            .collect::<Vec<f64>>()
    });
    Ok(parts.concat())
}

/// Monte Carlo table of all measures for Beta(alpha, beta) risk
/// distributions, one row per alpha.
pub fn beta_table(alphas: &[f64], beta: f64, n_draws: usize, seed: u64) -> Result<Vec<BetaRow>> {
    if n_draws < 2 {
        return Err(Error::InvalidInput("beta table needs at least 2 draws".into()));
    }
    if let Some(a) = alphas.iter().chain([&beta]).find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidInput(format!("beta parameters must be positive, got {a}")));
    }
    alphas
        .iter()
        .enumerate()
        .map(|(row, &alpha)| {
            let dist = RiskDistribution::new(beta_sample(alpha, beta, n_draws, seed, row as u64)?)?;
            Ok(BetaRow {
                alpha,
                beta,
                analytic_mean: alpha / (alpha + beta),
                report: MeasureReport::compute(&dist)?,
            })
        })
        .collect()
}

/// Posterior summary of one measure on one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSummary {
    pub measure: Measure,
    pub mortality: Interval,
    pub survival: Interval,
}

/// Every measure per posterior draw for the selected births.
pub fn posterior_measures(p: &PosteriorRisks, rows: &[usize]) -> Result<Vec<MeasureReport>> {
    parallel::try_map_range(p.n_draws(), |l| {
        MeasureReport::compute(&RiskDistribution::from_draw(p, l, rows)?)
    })
}

/// Median and 95% interval of every measure across draws.
pub fn summarize_measures(reports: &[MeasureReport]) -> Vec<MeasureSummary> {
    Measure::ALL
        .into_iter()
        .map(|m| {
            let mort: Vec<f64> = reports.iter().map(|r| r.mortality.get(m)).collect();
            let surv: Vec<f64> = reports.iter().map(|r| r.survival.get(m)).collect();
            MeasureSummary {
                measure: m,
                mortality: Interval::from_draws(&mort),
                survival: Interval::from_draws(&surv),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(v: &[f64]) -> RiskDistribution {
        RiskDistribution::new(v.to_vec()).unwrap()
    }

    fn gini_double_sum(d: &RiskDistribution) -> f64 {
        let mu = d.mean();
        let n = d.len();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += d.weight(i) * d.weight(j) * (d.values[i] - d.values[j]).abs();
            }
        }
        s / (2.0 * mu)
    }

    #[test]
    fn common_form_on_two_points() {
        let d = dist(&[0.1, 0.3]);
        assert!((common_form(&d, |r| (r - 1.0).powi(2)).unwrap() - 0.25).abs() < 1e-15);
        assert!((gini(&d).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn constant_distribution_has_no_inequality() {
        let d = dist(&[0.2; 7]);
        assert!((common_form(&d, |r| r * 3.0).unwrap() - 3.0).abs() < 1e-14);
        for m in [Measure::Cv2, Measure::Theil, Measure::VarLogs, Measure::Gini, Measure::Sd] {
            assert!(m.compute(&d).unwrap().abs() < 1e-15, "{m}");
        }
    }

    #[test]
    fn cv2_matches_moment_ratio() {
        let d = dist(&[0.01, 0.05, 0.2, 0.07, 0.33]);
        let direct = (d.sd() / d.mean()).powi(2);
        assert!((cv2(&d).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn weighted_equals_replicated() {
        let w = RiskDistribution::with_weights(vec![0.1, 0.4], vec![3.0, 1.0]).unwrap();
        let r = dist(&[0.1, 0.1, 0.1, 0.4]);
        for m in Measure::ALL {
            let (a, b) = (m.compute(&w).unwrap(), m.compute(&r).unwrap());
            assert!((a - b).abs() < 1e-14, "{m}: {a} vs {b}");
        }
        assert_eq!(w.median(), 0.1);
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(RiskDistribution::new(vec![]).is_err());
        assert!(RiskDistribution::new(vec![0.0, 0.2]).is_err());
        assert!(RiskDistribution::new(vec![0.5, 1.0]).is_err());
        assert!(RiskDistribution::with_weights(vec![0.5], vec![-1.0]).is_err());
    }

    #[test]
    fn complement_symmetric_measures() {
        let d = dist(&[0.02, 0.1, 0.3]);
        let r = MeasureReport::compute(&d).unwrap();
        assert!((r.mortality.sd - r.survival.sd).abs() < 1e-15);
        assert!((r.survival.mean - (1.0 - r.mortality.mean)).abs() < 1e-15);
    }

    #[test]
    fn sd_and_mean_audits_always_agree() {
        let a = dist(&[0.02, 0.1, 0.3]);
        let b = dist(&[0.05, 0.06, 0.5, 0.01]);
        for m in [Measure::Sd, Measure::Mean] {
            assert!(symmetry_audit(&a, &b, m).unwrap().agrees);
            assert!(symmetry_audit(&b, &a, m).unwrap().agrees);
        }
        let same = symmetry_audit(&a, &a, Measure::Gini).unwrap();
        assert!(same.agrees);
        assert_eq!(same.mortality_conclusion, Conclusion::Tie);
    }

    #[test]
    fn cv2_grows_as_mean_falls_with_fixed_spread() {
        let base = [0.30, 0.35, 0.40, 0.45, 0.50];
        let first = cv2(&dist(&base)).unwrap();
        let mut last = 0.0;
        for shift in [0.0, 0.1, 0.2, 0.25, 0.28, 0.29] {
            let d = dist(&base.map(|v| v - shift));
            let c = cv2(&d).unwrap();
            assert!(c > last);
            last = c;
        }
        assert!(last > 10.0 * first);
    }

    #[test]
    fn beta_sample_is_deterministic_and_clamped() {
        let a = beta_sample(0.1, 10.0, 100_000, 3, 0).unwrap();
        assert_eq!(a, beta_sample(0.1, 10.0, 100_000, 3, 0).unwrap());
        assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_ne!(a, beta_sample(0.1, 10.0, 100_000, 3, 1).unwrap());
        assert!(beta_table(&[0.0], 10.0, 100, 1).is_err());
    }

    #[test]
    fn measure_names_round_trip() {
        for m in Measure::ALL {
            assert_eq!(m.name().parse::<Measure>().unwrap(), m);
        }
        assert!("atkinson".parse::<Measure>().is_err());
    }

    proptest! {
        #[test]
        fn gini_fast_path_matches_double_sum(v in prop::collection::vec(0.001f64..0.999, 1..120)) {
            let d = dist(&v);
            prop_assert!((gini(&d).unwrap() - gini_double_sum(&d)).abs() < 1e-12);
        }

        #[test]
        fn weighted_gini_matches_double_sum(
            pairs in prop::collection::vec((0.001f64..0.999, 0.01f64..5.0), 1..80)
        ) {
            let (v, w): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let d = RiskDistribution::with_weights(v, w).unwrap();
            prop_assert!((gini(&d).unwrap() - gini_double_sum(&d)).abs() < 1e-12);
        }

        #[test]
        fn ratio_measures_are_scale_invariant(
            v in prop::collection::vec(0.001f64..0.999, 2..60),
            c in 0.05f64..1.0,
        ) {
            let d = dist(&v);
            let s = d.scaled(c).unwrap();
            for m in [Measure::Cv2, Measure::Theil, Measure::VarLogs, Measure::Gini] {
                let (a, b) = (m.compute(&d).unwrap(), m.compute(&s).unwrap());
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()), "{}: {} vs {}", m, a, b);
            }
        }
    }
}
