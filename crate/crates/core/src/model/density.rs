//! Log joint density of the hierarchical model and its likelihood gradient.

use std::f64::consts::PI;
use std::ops::Range;

use statrs::function::gamma::ln_gamma;

use super::design::ModelDesign;
use super::{softplus, ModelSpec, Priors, RandomEffects};
use crate::data::Unit;
use crate::error::{Error, Result};

/// Positions of each parameter block in the flat parameter vector:
///
/// `[alpha | delta (mothers) | gamma (clusters) | xi (districts, intercept/slope
/// interleaved) | tau (states, interleaved) | sigma2_mother | sigma2_cluster |
/// Sigma (11, 12, 22) | Psi (11, 12, 22)]`
///
/// Blocks for disabled random effects (and their variance entries) are empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub p: usize,
    pub mothers: usize,
    pub clusters: usize,
    pub districts: usize,
    pub states: usize,
    pub random_effects: RandomEffects,
}

impl ParamLayout {
    pub fn new(design: &ModelDesign, random_effects: RandomEffects) -> Self {
        let on = |flag: bool, unit: Unit| if flag { design.units.count(unit) } else { 0 };
        ParamLayout {
            p: design.p,
            mothers: on(random_effects.mother, Unit::Mother),
            clusters: on(random_effects.cluster, Unit::Cluster),
            districts: on(random_effects.district, Unit::District),
            states: on(random_effects.state, Unit::State),
            random_effects,
        }
    }

    pub fn alpha(&self) -> Range<usize> {
        0..self.p
    }

    pub fn mother(&self) -> Range<usize> {
        let s = self.p;
        s..s + self.mothers
    }

    pub fn cluster(&self) -> Range<usize> {
        let s = self.mother().end;
        s..s + self.clusters
    }

    pub fn district(&self) -> Range<usize> {
        let s = self.cluster().end;
        s..s + 2 * self.districts
    }

    pub fn state(&self) -> Range<usize> {
        let s = self.district().end;
        s..s + 2 * self.states
    }

    pub fn sigma_mother(&self) -> Option<usize> {
        self.random_effects.mother.then_some(self.state().end)
    }

    pub fn sigma_cluster(&self) -> Option<usize> {
        let s = self.state().end + usize::from(self.random_effects.mother);
        self.random_effects.cluster.then_some(s)
    }

    /// Start of the three unique entries of the district covariance.
    pub fn district_cov(&self) -> Option<usize> {
        let s = self.state().end
            + usize::from(self.random_effects.mother)
            + usize::from(self.random_effects.cluster);
        self.random_effects.district.then_some(s)
    }

    pub fn state_cov(&self) -> Option<usize> {
        let s = self.state().end
            + usize::from(self.random_effects.mother)
            + usize::from(self.random_effects.cluster)
            + 3 * usize::from(self.random_effects.district);
        self.random_effects.state.then_some(s)
    }

    pub fn dim(&self) -> usize {
        self.state().end
            + usize::from(self.random_effects.mother)
            + usize::from(self.random_effects.cluster)
            + 3 * usize::from(self.random_effects.district)
            + 3 * usize::from(self.random_effects.state)
    }

    /// Range holding the variance components.
    pub fn variances(&self) -> Range<usize> {
        self.state().end..self.dim()
    }

    /// Human-readable name of every parameter.
    pub fn names(&self, design: &ModelDesign) -> Vec<String> {
        let mut names = design.spec.column_names.clone();
        let ids = &design.units.ids;
        for k in 0..self.mothers {
            names.push(format!("mother[{}]", ids[0][k]));
        }
        for k in 0..self.clusters {
            names.push(format!("cluster[{}]", ids[1][k]));
        }
        for k in 0..self.districts {
            names.push(format!("district_intercept[{}]", ids[2][k]));
            names.push(format!("district_slope[{}]", ids[2][k]));
        }
        for k in 0..self.states {
            names.push(format!("state_intercept[{}]", ids[3][k]));
            names.push(format!("state_slope[{}]", ids[3][k]));
        }
        if self.random_effects.mother {
            names.push("sigma2_mother".into());
        }
        if self.random_effects.cluster {
            names.push("sigma2_cluster".into());
        }
        if self.random_effects.district {
            names.extend(["district_cov11", "district_cov12", "district_cov22"].map(String::from));
        }
        if self.random_effects.state {
            names.extend(["state_cov11", "state_cov12", "state_cov22"].map(String::from));
        }
        names
    }

    /// Random-effect contribution to birth `i`'s linear predictor.
    pub fn random_offset(&self, design: &ModelDesign, theta: &[f64], i: usize, t: f64) -> f64 {
        let u = &design.units;
        let mut o = 0.0;
        if self.mothers > 0 {
            o += theta[self.mother().start + u.of(Unit::Mother, i)];
        }
        if self.clusters > 0 {
            o += theta[self.cluster().start + u.of(Unit::Cluster, i)];
        }
        if self.districts > 0 {
            let k = self.district().start + 2 * u.of(Unit::District, i);
            o += theta[k] + theta[k + 1] * t;
        }
        if self.states > 0 {
            let k = self.state().start + 2 * u.of(Unit::State, i);
            o += theta[k] + theta[k + 1] * t;
        }
        o
    }

    pub fn linear_predictor(&self, design: &ModelDesign, theta: &[f64]) -> Vec<f64> {
        let alpha = &theta[self.alpha()];
        (0..design.n)
            .map(|i| {
                dot(design.row(i), alpha) + self.random_offset(design, theta, i, design.t[i])
            })
            .collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_finite(theta: &[f64]) -> Result<()> {
    if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("parameter {i} is {}", theta[i])));
    }
    Ok(())
}

fn check_dim(layout: &ParamLayout, theta: &[f64]) -> Result<()> {
    if theta.len() != layout.dim() {
        return Err(Error::InvalidInput(format!(
            "parameter vector has length {}, model expects {}",
            theta.len(),
            layout.dim()
        )));
    }
    Ok(())
}

/// Bernoulli-logistic log-likelihood.
pub fn log_likelihood(spec: &ModelSpec, design: &ModelDesign, theta: &[f64]) -> Result<f64> {
    let layout = ParamLayout::new(design, spec.random_effects);
    check_dim(&layout, theta)?;
    check_finite(theta)?;
    let eta = layout.linear_predictor(design, theta);
    Ok(eta
        .iter()
        .zip(&design.y)
        .map(|(&e, &y)| y * e - softplus(e))
        .sum())
}

/// Gradient of [`log_likelihood`] with respect to the full parameter vector.
/// Variance components do not enter the likelihood, so their entries are zero.
pub fn log_likelihood_gradient(
    spec: &ModelSpec,
    design: &ModelDesign,
    theta: &[f64],
) -> Result<Vec<f64>> {
    let layout = ParamLayout::new(design, spec.random_effects);
    check_dim(&layout, theta)?;
    check_finite(theta)?;
    let eta = layout.linear_predictor(design, theta);
    let mut g = vec![0.0; layout.dim()];
    let u = &design.units;
    for i in 0..design.n {
        let r = design.y[i] - super::logistic(eta[i]);
        for (gj, xj) in g[layout.alpha()].iter_mut().zip(design.row(i)) {
            *gj += r * xj;
        }
        if layout.mothers > 0 {
            g[layout.mother().start + u.of(Unit::Mother, i)] += r;
        }
        if layout.clusters > 0 {
            g[layout.cluster().start + u.of(Unit::Cluster, i)] += r;
        }
        if layout.districts > 0 {
            let k = layout.district().start + 2 * u.of(Unit::District, i);
            g[k] += r;
            g[k + 1] += r * design.t[i];
        }
        if layout.states > 0 {
            let k = layout.state().start + 2 * u.of(Unit::State, i);
            g[k] += r;
            g[k + 1] += r * design.t[i];
        }
    }
    Ok(g)
}

pub(crate) fn normal_logpdf(x: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - 0.5 * x * x / var
}

pub(crate) fn inv_gamma_logpdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

fn det2(m: [[f64; 2]; 2]) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

fn inv2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let d = det2(m);
    [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]
}

fn is_pd2(m: [[f64; 2]; 2]) -> bool {
    m[0][0] > 0.0 && det2(m) > 0.0
}

pub(crate) fn bivariate_normal_logpdf(v: [f64; 2], cov: [[f64; 2]; 2]) -> f64 {
    let inv = inv2(cov);
    let q = v[0] * (inv[0][0] * v[0] + inv[0][1] * v[1]) + v[1] * (inv[1][0] * v[0] + inv[1][1] * v[1]);
    -(2.0 * PI).ln() - 0.5 * det2(cov).ln() - 0.5 * q
}

/// Inverse Wishart log density for 2x2 matrices.
pub(crate) fn inv_wishart_logpdf(x: [[f64; 2]; 2], scale: [[f64; 2]; 2], df: f64) -> f64 {
    if !is_pd2(x) {
        return f64::NEG_INFINITY;
    }
    let p = 2.0;
    let ln_mv_gamma = 0.5 * PI.ln() + ln_gamma(df / 2.0) + ln_gamma(df / 2.0 - 0.5);
    let xi = inv2(x);
    let trace = scale[0][0] * xi[0][0] + scale[0][1] * xi[1][0] + scale[1][0] * xi[0][1] + scale[1][1] * xi[1][1];
    0.5 * df * det2(scale).ln() - 0.5 * df * p * 2f64.ln() - ln_mv_gamma
        - 0.5 * (df + p + 1.0) * det2(x).ln()
        - 0.5 * trace
}

pub(crate) fn cov_from(theta: &[f64], start: usize) -> [[f64; 2]; 2] {
    [[theta[start], theta[start + 1]], [theta[start + 1], theta[start + 2]]]
}

/// Log prior density of all parameters (fixed effects, random effects given
/// their variances, and the variance components).
pub(crate) fn log_prior(priors: &Priors, layout: &ParamLayout, design: &ModelDesign, theta: &[f64]) -> f64 {
    let mut lp: f64 = theta[layout.alpha()]
        .iter()
        .zip(&design.spec.prior_variances)
        .map(|(&a, &v)| normal_logpdf(a, v))
        .sum();
    let (shape, scale) = (priors.variance_shape, priors.variance_scale);
    if let Some(k) = layout.sigma_mother() {
        let s2 = theta[k];
        if s2 <= 0.0 {
            return f64::NEG_INFINITY;
        }
        lp += theta[layout.mother()].iter().map(|&d| normal_logpdf(d, s2)).sum::<f64>();
        lp += inv_gamma_logpdf(s2, shape, scale);
    }
    if let Some(k) = layout.sigma_cluster() {
        let s2 = theta[k];
        if s2 <= 0.0 {
            return f64::NEG_INFINITY;
        }
        lp += theta[layout.cluster()].iter().map(|&d| normal_logpdf(d, s2)).sum::<f64>();
        lp += inv_gamma_logpdf(s2, shape, scale);
    }
    for (cov_start, block) in [
        (layout.district_cov(), layout.district()),
        (layout.state_cov(), layout.state()),
    ] {
        if let Some(k) = cov_start {
            let cov = cov_from(theta, k);
            if !is_pd2(cov) {
                return f64::NEG_INFINITY;
            }
            lp += theta[block]
                .chunks_exact(2)
                .map(|v| bivariate_normal_logpdf([v[0], v[1]], cov))
                .sum::<f64>();
            lp += inv_wishart_logpdf(cov, priors.wishart_scale, priors.wishart_df);
        }
    }
    lp
}

/// Log joint density (normalized prior terms included). Returns negative
/// infinity for variances or covariances outside their support.
pub fn log_posterior(spec: &ModelSpec, design: &ModelDesign, theta: &[f64]) -> Result<f64> {
    let layout = ParamLayout::new(design, spec.random_effects);
    let ll = log_likelihood(spec, design, theta)?;
    Ok(ll + log_prior(&spec.priors, &layout, design, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, CovariateRule, NestingCounts, SyntheticCovariate, SyntheticSpec, VarianceComponents};
    use crate::model::design::ModelDesign;
    use crate::model::NumericBasis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn one_birth() -> (ModelSpec, ModelDesign) {
        let schema = crate::data::CovariateSchema::from_json(
            r#"{"year_window": [2000, 2000], "columns": [
                {"name": "died", "type": "outcome"},
                {"name": "year", "type": "year"},
                {"name": "mother", "type": "id", "unit": "mother"},
                {"name": "cluster", "type": "id", "unit": "cluster"},
                {"name": "district", "type": "id", "unit": "district"},
                {"name": "state", "type": "id", "unit": "state"}]}"#,
        )
        .unwrap();
        let ds = crate::data::read_csv(
            "died,year,mother,cluster,district,state\n1,2000,m,c,d,s\n".as_bytes(),
            &schema,
        )
        .unwrap();
        let spec = ModelSpec::new(&[]);
        let design = ModelDesign::build(&spec, &ds).unwrap();
        (spec, design)
    }

    #[test]
    fn layout_is_contiguous() {
        let (spec, design) = one_birth();
        let l = ParamLayout::new(&design, spec.random_effects);
        assert_eq!(l.dim(), 1 + 1 + 1 + 2 + 2 + 1 + 1 + 3 + 3);
        assert_eq!(l.names(&design).len(), l.dim());
        assert_eq!(l.state_cov().unwrap() + 3, l.dim());
    }

    #[test]
    fn all_zero_effects_one_death_hand_evaluated() {
        let (spec, design) = one_birth();
        let l = ParamLayout::new(&design, spec.random_effects);
        let mut theta = vec![0.0; l.dim()];
        theta[l.sigma_mother().unwrap()] = 1.0;
        theta[l.sigma_cluster().unwrap()] = 1.0;
        let id = [1.0, 0.0, 1.0];
        theta[l.district_cov().unwrap()..l.district_cov().unwrap() + 3].copy_from_slice(&id);
        theta[l.state_cov().unwrap()..l.state_cov().unwrap() + 3].copy_from_slice(&id);

        let ln2pi = (2.0 * PI).ln();
        // intercept N(0, 9) at 0
        let intercept = -0.5 * (ln2pi + 9f64.ln());
        // mother and cluster N(0, 1) at 0
        let scalar_re = 2.0 * (-0.5 * ln2pi);
        // district and state N2(0, I) at 0
        let bivariate_re = 2.0 * (-ln2pi);
        // IG(3, 2) at 1: 3 ln 2 - ln Gamma(3) - 2
        let ig = 2.0 * (3.0 * 2f64.ln() - 2f64.ln() - 2.0);
        // IW(diag(1, 0.1), 4) at I: 2 ln 0.1 - 4 ln 2 - ln Gamma_2(2) - 3.5 ln 1 - 0.55
        let ln_gamma2 = 0.5 * PI.ln() + 0.0 + ln_gamma(1.5);
        let iw = 2.0 * (2.0 * 0.1f64.ln() - 4.0 * 2f64.ln() - ln_gamma2 - 0.55);
        let expected = 0.5f64.ln() + intercept + scalar_re + bivariate_re + ig + iw;
        let got = log_posterior(&spec, &design, &theta).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((log_likelihood(&spec, &design, &theta).unwrap() - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn non_finite_and_wrong_length_rejected() {
        let (spec, design) = one_birth();
        let l = ParamLayout::new(&design, spec.random_effects);
        let mut theta = vec![0.5; l.dim()];
        theta[0] = f64::NAN;
        assert!(matches!(log_posterior(&spec, &design, &theta), Err(Error::NonFinite(_))));
        assert!(log_posterior(&spec, &design, &[0.0]).is_err());
    }

    pub(crate) fn ten_birth_instance() -> (ModelSpec, ModelDesign) {
        let spec = SyntheticSpec {
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
                SyntheticCovariate {
                    name: "sex".into(),
                    rule: CovariateRule::Categorical {
                        levels: vec!["M".into(), "F".into()],
                        effects: vec![0.0, 0.3],
                        probs: vec![0.5, 0.5],
                        probs_by_year: BTreeMap::new(),
                    },
                },
                SyntheticCovariate {
                    name: "age".into(),
                    rule: CovariateRule::Numeric {
                        mean: 25.0,
                        sd: 5.0,
                        mean_by_year: BTreeMap::new(),
                        min: Some(15.0),
                        max: Some(35.0),
                        slope: 0.05,
                        center: 25.0,
                    },
                },
            ],
            variances: VarianceComponents {
                mother: 0.5,
                cluster: 0.3,
                district: [[0.2, 0.0], [0.0, 0.01]],
                state: [[0.2, 0.0], [0.0, 0.01]],
            },
        };
        let (ds, _) = generate_synthetic(&spec, 17).unwrap();
        let ds = ds.subset(&(0..10.min(ds.len())).collect::<Vec<_>>());
        assert_eq!(ds.len(), 10);
        let mut model = ModelSpec::new(&["sex", "age", "year"]);
        model.default_numeric_basis = NumericBasis::Linear;
        let design = ModelDesign::build(&model, &ds).unwrap();
        (model, design)
    }

    #[test]
    fn likelihood_gradient_matches_central_differences() {
        let (spec, design) = ten_birth_instance();
        let l = ParamLayout::new(&design, spec.random_effects);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let theta: Vec<f64> = (0..l.dim())
            .map(|k| {
                if l.variances().contains(&k) {
                    1.0
                } else {
                    rng.random_range(-0.8..0.8)
                }
            })
            .collect();
        let g = log_likelihood_gradient(&spec, &design, &theta).unwrap();
        let h = 1e-5;
        for k in 0..l.dim() {
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (log_likelihood(&spec, &design, &up).unwrap()
                - log_likelihood(&spec, &design, &dn).unwrap())
                / (2.0 * h);
            let scale = g[k].abs().max(fd.abs()).max(1e-3);
            assert!((g[k] - fd).abs() / scale < 1e-5, "param {k}: {} vs {fd}", g[k]);
        }
    }

    #[test]
    fn doubling_rows_doubles_likelihood() {
        let (spec, design) = ten_birth_instance();
        let mut doubled = design.clone();
        doubled.x.extend_from_slice(&design.x);
        doubled.y.extend_from_slice(&design.y);
        doubled.t.extend_from_slice(&design.t);
        for k in 0..4 {
            let copy = design.units.of_birth[k].clone();
            doubled.units.of_birth[k].extend(copy);
        }
        doubled.n *= 2;
        let l = ParamLayout::new(&design, spec.random_effects);
        let theta: Vec<f64> = (0..l.dim()).map(|k| if l.variances().contains(&k) { 1.0 } else { 0.1 * (k % 5) as f64 - 0.2 }).collect();
        let single = log_likelihood(&spec, &design, &theta).unwrap();
        let twice = log_likelihood(&spec, &doubled, &theta).unwrap();
        assert!((twice - 2.0 * single).abs() < 1e-12);
    }

    #[test]
    fn density_helpers_match_closed_forms() {
        assert!((normal_logpdf(1.0, 4.0) - (-0.5 * (8.0 * PI).ln() - 0.125)).abs() < 1e-15);
        // bivariate with diagonal covariance factorizes
        let biv = bivariate_normal_logpdf([0.3, -0.2], [[2.0, 0.0], [0.0, 0.5]]);
        assert!((biv - normal_logpdf(0.3, 2.0) - normal_logpdf(-0.2, 0.5)).abs() < 1e-14);
        assert_eq!(inv_gamma_logpdf(-1.0, 3.0, 2.0), f64::NEG_INFINITY);
    }
}
