//! Kernel density estimates of risk distributions on [0, 1], pointwise
//! credible bands across posterior draws, and the Kullback-Leibler and L1
//! divergences between densities.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::measures::RiskDistribution;
use crate::model::PosteriorRisks;
use crate::parallel;
use crate::stats::{quantile_sorted, Interval};

pub const DEFAULT_GRID: usize = 512;
/// Floor applied to densities before taking logs.
pub const DENSITY_FLOOR: f64 = 1e-12;
/// Binning grid points per output grid interval.
const REFINE: usize = 4;
/// Kernel truncation in bandwidths.
const KERNEL_REACH: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Reflect the sample at 0 and 1.
    #[default]
    Reflection,
    /// Local linear boundary kernel; removes the first-order bias that
    /// reflection leaves when the density has nonzero slope at a boundary.
    LinearCorrection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdeOptions {
    pub grid_size: usize,
    pub boundary: Boundary,
    /// Fixed bandwidth; `None` uses Silverman's rule.
    pub bandwidth: Option<f64>,
}

impl Default for KdeOptions {
    fn default() -> Self {
        KdeOptions {
            grid_size: DEFAULT_GRID,
            boundary: Boundary::Reflection,
            bandwidth: None,
        }
    }
}

/// Density heights on an equally spaced grid over [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub heights: Vec<f64>,
    pub bandwidth: f64,
    /// Pointwise 2.5% and 97.5% quantiles across draws.
    pub band: Option<Vec<[f64; 2]>>,
}

fn make_grid(grid_size: usize) -> Result<Vec<f64>> {
    if grid_size < 3 {
        return Err(Error::InvalidInput(format!("grid needs at least 3 points, got {grid_size}")));
    }
    let step = 1.0 / (grid_size - 1) as f64;
    Ok((0..grid_size).map(|g| g as f64 * step).collect())
}

fn trapezoid(heights: &[f64]) -> f64 {
    let step = 1.0 / (heights.len() - 1) as f64;
    let inner: f64 = heights[1..heights.len() - 1].iter().sum();
    step * (inner + 0.5 * (heights[0] + heights[heights.len() - 1]))
}

fn std_normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal_cdf(u: f64) -> f64 {
    0.5 * (1.0 + erf(u / std::f64::consts::SQRT_2))
}

impl DensityEstimate {
    /// Density from analytic heights `f(x)` on the grid, normalized.
    pub fn from_heights(grid_size: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let grid = make_grid(grid_size)?;
        let heights: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
        Self::normalized(grid, heights, f64::NAN)
    }

    fn normalized(grid: Vec<f64>, mut heights: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if heights.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
            return Err(Error::InvalidInput("density heights must be finite and nonnegative".into()));
        }
        let total = trapezoid(&heights);
        if total <= 0.0 {
            return Err(Error::Degenerate("density integrates to zero on the grid".into()));
        }
        heights.iter_mut().for_each(|h| *h /= total);
        Ok(DensityEstimate {
            grid,
            heights,
            bandwidth,
            band: None,
        })
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.heights)
    }

    pub fn grid_size(&self) -> usize {
        self.grid.len()
    }

    fn check_grid(&self, other: &DensityEstimate) -> Result<()> {
        if self.grid.len() != other.grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} vs {} grid points",
                self.grid.len(),
                other.grid.len()
            )));
        }
        Ok(())
    }

    /// Largest absolute height difference on the grid.
    pub fn sup_distance(&self, other: &DensityEstimate) -> Result<f64> {
        self.check_grid(other)?;
        Ok(self
            .heights
            .iter()
            .zip(&other.heights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Writes `grid,height,lo,hi` rows (band columns empty without a band).
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["grid", "height", "lo", "hi"])?;
        for (g, (&x, &h)) in self.grid.iter().zip(&self.heights).enumerate() {
            let (lo, hi) = match &self.band {
                Some(b) => (b[g][0].to_string(), b[g][1].to_string()),
                None => (String::new(), String::new()),
            };
            out.write_record([x.to_string(), h.to_string(), lo, hi])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Weighted quantile: smallest value whose cumulative weight reaches `q`.
fn weighted_quantile(sorted: &[(f64, f64)], q: f64) -> f64 {
    let mut cum = 0.0;
    for &(v, w) in sorted {
        cum += w;
        if cum >= q {
            return v;
        }
    }
    sorted[sorted.len() - 1].0
}

/// Silverman's rule `0.9 min(sd, IQR / 1.34) n^(-1/5)`, with the effective
/// sample size `1 / sum w_i^2` for weighted samples.
pub fn silverman_bandwidth(dist: &RiskDistribution) -> Result<f64> {
    let v = dist.values();
    let (iqr, n_eff) = match dist.weights() {
        None => {
            let mut s = v.to_vec();
            s.sort_by(f64::total_cmp);
            (quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25), v.len() as f64)
        }
        Some(w) => {
            let mut s: Vec<(f64, f64)> = v.iter().copied().zip(w.iter().copied()).collect();
            s.sort_by(|a, b| a.0.total_cmp(&b.0));
            let n_eff = 1.0 / w.iter().map(|w| w * w).sum::<f64>();
            (weighted_quantile(&s, 0.75) - weighted_quantile(&s, 0.25), n_eff)
        }
    };
    let sd = dist.sd();
    let first = v[0];
    if v.iter().all(|&x| x == first) || sd <= 0.0 {
        return Err(Error::Degenerate("cannot estimate a density from identical values".into()));
    }
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok(0.9 * spread * n_eff.powf(-0.2))
}

/// Gaussian kernel density estimate on `[0, 1]`, computed from a linearly
/// binned sample and renormalized to integrate to 1 on the grid.
pub fn kde_with(dist: &RiskDistribution, opts: &KdeOptions) -> Result<DensityEstimate> {
    let grid = make_grid(opts.grid_size)?;
    let h = match opts.bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::InvalidInput(format!("bandwidth must be positive, got {h}"))),
        None => silverman_bandwidth(dist)?,
    };
    let g_last = opts.grid_size - 1;
    let m_last = REFINE * g_last;
    let delta = 1.0 / m_last as f64;

    // linear binning onto the refined grid
    let mut counts = vec![0.0; m_last + 1];
    let n = dist.len() as f64;
    for (i, &v) in dist.values().iter().enumerate() {
        let w = dist.weights().map_or(1.0 / n, |w| w[i]);
        let pos = v / delta;
        let lo = (pos.floor() as usize).min(m_last - 1);
        let frac = pos - lo as f64;
        counts[lo] += w * (1.0 - frac);
        counts[lo + 1] += w * frac;
    }

    let reach = ((KERNEL_REACH * h / delta).ceil() as usize).min(2 * m_last);
    let k0: Vec<f64> = (0..=reach).map(|d| std_normal_pdf(d as f64 * delta / h) / h).collect();
    let mut s0 = vec![0.0; opts.grid_size];
    let mut s1 = vec![0.0; opts.grid_size];
    for (m, &c) in counts.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let k_lo = m.saturating_sub(reach).div_ceil(REFINE);
        let k_hi = ((m + reach) / REFINE).min(g_last);
        for k in k_lo..=k_hi {
            let d = (REFINE * k).abs_diff(m);
            s0[k] += c * k0[d];
            // signed (x_k - y_m) / h
            let u = (REFINE * k) as f64 - m as f64;
            s1[k] += c * k0[d] * u * delta / h;
        }
        if opts.boundary == Boundary::Reflection {
            // mirror images at -y_m and 2 - y_m
            if m <= reach {
                for k in 0..=((reach - m) / REFINE).min(g_last) {
                    s0[k] += c * k0[REFINE * k + m];
                }
            }
            let far = 2 * m_last - m;
            if far <= reach + m_last {
                let k_lo = far.saturating_sub(reach).div_ceil(REFINE);
                for k in k_lo..=g_last {
                    let d = far - REFINE * k;
                    if d <= reach {
                        s0[k] += c * k0[d];
                    }
                }
            }
        }
    }
    let heights = match opts.boundary {
        Boundary::Reflection => s0,
        Boundary::LinearCorrection => grid
            .iter()
            .zip(s0.iter().zip(&s1))
            .map(|(&x, (&f0, &f1))| {
                let (a, b) = ((x - 1.0) / h, x / h);
                let a0 = std_normal_cdf(b) - std_normal_cdf(a);
                let a1 = std_normal_pdf(a) - std_normal_pdf(b);
                let a2 = a0 - (b * std_normal_pdf(b) - a * std_normal_pdf(a));
                ((a2 * f0 - a1 * f1) / (a0 * a2 - a1 * a1)).max(0.0)
            })
            .collect(),
    };
    DensityEstimate::normalized(grid, heights, h)
}

/// [`kde_with`] with reflection, Silverman bandwidth and `grid_size` points.
pub fn kde(dist: &RiskDistribution, grid_size: usize) -> Result<DensityEstimate> {
    kde_with(
        dist,
        &KdeOptions {
            grid_size,
            ..Default::default()
        },
    )
}

/// `integral f0 log(f0 / f1)` by the trapezoid rule, both densities floored
/// at [`DENSITY_FLOOR`].
pub fn kl_divergence(p: &DensityEstimate, q: &DensityEstimate) -> Result<f64> {
    p.check_grid(q)?;
    let integrand: Vec<f64> = p
        .heights
        .iter()
        .zip(&q.heights)
        .map(|(&a, &b)| {
            let (a, b) = (a.max(DENSITY_FLOOR), b.max(DENSITY_FLOOR));
            a * (a / b).ln()
        })
        .collect();
    Ok(trapezoid(&integrand))
}

/// `(1/2) integral |f0 - f1|`, clamped to [0, 1].
pub fn l1_distance(p: &DensityEstimate, q: &DensityEstimate) -> Result<f64> {
    p.check_grid(q)?;
    let diff: Vec<f64> = p.heights.iter().zip(&q.heights).map(|(a, b)| (a - b).abs()).collect();
    Ok((0.5 * trapezoid(&diff)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Kl,
    L1,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Kl => "kl",
            Metric::L1 => "l1",
        }
    }

    pub fn between(self, p: &DensityEstimate, q: &DensityEstimate) -> Result<f64> {
        match self {
            Metric::Kl => kl_divergence(p, q),
            Metric::L1 => l1_distance(p, q),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kl" => Ok(Metric::Kl),
            "l1" => Ok(Metric::L1),
            _ => Err(Error::InvalidInput(format!("unknown metric `{s}` (kl, l1)"))),
        }
    }
}

/// Divergence values, one per posterior draw, and their summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawComparison {
    pub metric: Metric,
    pub values: Vec<f64>,
    pub summary: Interval,
}

/// Applies KDE and `metric` within each draw `l`, comparing `first(l)` with
/// `second(l)`.
pub fn per_draw_compare<F, G>(
    n_draws: usize,
    opts: &KdeOptions,
    metric: Metric,
    first: F,
    second: G,
) -> Result<DrawComparison>
where
    F: Fn(usize) -> Result<RiskDistribution> + Sync,
    G: Fn(usize) -> Result<RiskDistribution> + Sync,
{
    if n_draws == 0 {
        return Err(Error::InvalidInput("no draws to compare".into()));
    }
    let values = parallel::try_map_range(n_draws, |l| {
        let p = kde_with(&first(l)?, opts)?;
        let q = kde_with(&second(l)?, opts)?;
        metric.between(&p, &q)
    })?;
    Ok(DrawComparison {
        metric,
        summary: Interval::from_draws(&values),
        values,
    })
}

/// Per-draw divergence between two selections of births from one posterior.
pub fn compare_selections(
    p: &PosteriorRisks,
    rows0: &[usize],
    rows1: &[usize],
    metric: Metric,
    opts: &KdeOptions,
) -> Result<DrawComparison> {
    per_draw_compare(
        p.n_draws(),
        opts,
        metric,
        |l| RiskDistribution::from_draw(p, l, rows0),
        |l| RiskDistribution::from_draw(p, l, rows1),
    )
}

/// Pointwise median density across draws with its 95% band.
pub fn density_band<F>(n_draws: usize, opts: &KdeOptions, dist: F) -> Result<DensityEstimate>
where
    F: Fn(usize) -> Result<RiskDistribution> + Sync,
{
    if n_draws == 0 {
        return Err(Error::InvalidInput("no draws for a density band".into()));
    }
    let estimates = parallel::try_map_range(n_draws, |l| kde_with(&dist(l)?, opts))?;
    let grid = estimates[0].grid.clone();
    let mut heights = Vec::with_capacity(grid.len());
    let mut band = Vec::with_capacity(grid.len());
    let mut column = vec![0.0; n_draws];
    for g in 0..grid.len() {
        for (c, e) in column.iter_mut().zip(&estimates) {
            *c = e.heights[g];
        }
        column.sort_by(f64::total_cmp);
        heights.push(quantile_sorted(&column, 0.5));
        band.push([quantile_sorted(&column, 0.025), quantile_sorted(&column, 0.975)]);
    }
    let bandwidth = estimates.iter().map(|e| e.bandwidth).sum::<f64>() / n_draws as f64;
    Ok(DensityEstimate {
        grid,
        heights,
        bandwidth,
        band: Some(band),
    })
}
