//! Bayesian hierarchical logistic regression for individual mortality risk.
//!
//! ```text
//! logit(pi_i) = x_i' alpha + delta_m(i) + gamma_c(i)
//!             + xi_d(i),1 + xi_d(i),2 * t_i + tau_s(i),1 + tau_s(i),2 * t_i
//! ```
//!
//! with normal random effects, Inverse Gamma variances for mothers and
//! clusters, and Inverse Wishart covariances for the district and state
//! intercept/slope pairs. `t_i` is the birth-year index centered on the
//! study window.

mod density;
mod design;
mod diagnostics;
mod polya_gamma;
mod posterior;
mod sampler;
mod store;

use serde::{Deserialize, Serialize};

pub use density::{log_likelihood, log_likelihood_gradient, log_posterior, ParamLayout};
pub use design::{DesignSpec, ModelDesign, Term, TermCoding, TermSource};
pub use diagnostics::{effective_sample_size, split_rhat, FitDiagnostics, ParameterDiagnostic};
pub use polya_gamma::sample_polya_gamma;
pub use posterior::{posterior_mean_risks, DrawInfo, ParameterDraws, PosteriorRisks};
pub use sampler::{fit, CounterfactualRows, FitResult, FittedModel};
pub use store::FIT_FILES;

/// Inverse logit, clamped so the result is strictly inside (0, 1).
pub fn logistic(x: f64) -> f64 {
    let p = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `log(1 + exp(x))` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// How a numeric covariate enters the linear predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "basis", rename_all = "snake_case")]
pub enum NumericBasis {
    /// B-spline with interior knots at equally spaced quantiles.
    Spline {
        degree: usize,
        interior_knots: usize,
    },
    /// Single standardized column.
    Linear,
}

impl Default for NumericBasis {
    fn default() -> Self {
        NumericBasis::Spline {
            degree: 3,
            interior_knots: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    pub intercept_variance: f64,
    pub main_effect_variance: f64,
    pub interaction_variance: f64,
    /// Inverse Gamma (shape, scale) for the mother and cluster variances.
    pub variance_shape: f64,
    pub variance_scale: f64,
    /// Inverse Wishart scale matrix and degrees of freedom for the district
    /// and state covariance matrices.
    pub wishart_scale: [[f64; 2]; 2],
    pub wishart_df: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            intercept_variance: 9.0,
            main_effect_variance: 1.0,
            interaction_variance: 0.5,
            variance_shape: 3.0,
            variance_scale: 2.0,
            wishart_scale: [[1.0, 0.0], [0.0, 0.1]],
            wishart_df: 4.0,
        }
    }
}

/// Which random-effect levels are in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomEffects {
    pub mother: bool,
    pub cluster: bool,
    pub district: bool,
    pub state: bool,
}

impl Default for RandomEffects {
    fn default() -> Self {
        RandomEffects {
            mother: true,
            cluster: true,
            district: true,
            state: true,
        }
    }
}

impl RandomEffects {
    pub fn none() -> Self {
        RandomEffects {
            mother: false,
            cluster: false,
            district: false,
            state: false,
        }
    }
}

/// Model structure: covariates, their coding, priors and random effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Covariate names from the schema; `year` refers to the birth year.
    pub covariates: Vec<String>,
    /// Include every two-way interaction among `covariates`.
    #[serde(default = "yes")]
    pub interactions: bool,
    /// Per-covariate basis for numeric covariates.
    #[serde(default)]
    pub numeric_bases: std::collections::BTreeMap<String, NumericBasis>,
    #[serde(default)]
    pub default_numeric_basis: NumericBasis,
    #[serde(default)]
    pub priors: Priors,
    #[serde(default)]
    pub random_effects: RandomEffects,
}

fn yes() -> bool {
    true
}

impl ModelSpec {
    pub fn new(covariates: &[&str]) -> Self {
        ModelSpec {
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            interactions: true,
            numeric_bases: Default::default(),
            default_numeric_basis: NumericBasis::default(),
            priors: Priors::default(),
            random_effects: RandomEffects::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Polya-Gamma augmented Gibbs sampler.
    #[default]
    PolyaGamma,
    /// Adaptive random-walk Metropolis for the coefficients, conjugate variance updates.
    MetropolisWithinGibbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcSettings {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub seed: u64,
    pub sampler: SamplerKind,
    /// Retry a chain with the fallback sampler if the Polya-Gamma chain fails.
    pub fallback: bool,
}

impl Default for McmcSettings {
    fn default() -> Self {
        McmcSettings {
            chains: 4,
            warmup: 1000,
            draws: 1000,
            seed: 0,
            sampler: SamplerKind::PolyaGamma,
            fallback: true,
        }
    }
}

/// Model configuration file: model structure plus MCMC settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub model: ModelSpec,
    #[serde(default)]
    pub mcmc: McmcSettings,
}
