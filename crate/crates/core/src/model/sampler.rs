//! MCMC for the hierarchical model.
//!
//! The default sampler augments each birth with a Polya-Gamma variable, which
//! makes every coefficient block conditionally Gaussian:
//!
//! 1. `omega_i ~ PG(1, eta_i)`
//! 2. fixed effects, district and state effects jointly (one Gaussian block)
//! 3. cluster intercepts, then mother intercepts (independent scalars)
//! 4. scale moves on the mother and cluster levels
//! 5. variance components from their Inverse Gamma / Inverse Wishart conditionals
//!
//! The fallback replaces steps 1-3 with adaptive random-walk Metropolis
//! updates; steps 4 and 5 are shared.

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use super::density::{cov_from, dot, ParamLayout};
use super::design::ModelDesign;
use super::diagnostics::{effective_sample_size, split_rhat, FitDiagnostics, ParameterDiagnostic};
use super::polya_gamma::sample_polya_gamma;
use super::posterior::{DrawInfo, ParameterDraws, PosteriorRisks};
use super::{logistic, softplus, McmcSettings, ModelSpec, Priors, SamplerKind};
use crate::data::{CovariateValue, Dataset, Unit};
use crate::error::{Error, Result};
use crate::parallel;
use crate::stats::quantile;

/// Posterior of a fitted model together with everything needed to evaluate
/// counterfactual risks per draw.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub dataset: Dataset,
    pub design: ModelDesign,
    pub layout: ParamLayout,
    pub params: ParameterDraws,
    pub risks: PosteriorRisks,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: FittedModel,
    pub diagnostics: FitDiagnostics,
}

/// Design rows for a set of births with some covariates (and possibly the
/// birth year) replaced. Random effects stay attached to each birth's own units.
#[derive(Debug, Clone)]
pub struct CounterfactualRows {
    pub rows: Vec<usize>,
    x: Vec<f64>,
    t: Vec<f64>,
    /// Number of covariate values clamped into the fitted support.
    pub clamped: usize,
}

impl FittedModel {
    pub fn n_draws(&self) -> usize {
        self.params.n_draws()
    }

    /// Builds counterfactual design rows. `values[k]` holds the term values
    /// (in design term order) and `years[k]` the birth year for birth `rows[k]`.
    pub fn counterfactual(
        &self,
        rows: &[usize],
        values: &[Vec<CovariateValue>],
        years: &[i32],
    ) -> CounterfactualRows {
        let p = self.design.p;
        let spec = &self.design.spec;
        let mut x = vec![0.0; rows.len() * p];
        let mut clamped = 0;
        for (k, vals) in values.iter().enumerate() {
            clamped += spec.write_row(vals, &mut x[k * p..(k + 1) * p]);
        }
        let t = years
            .iter()
            .map(|&y| crate::data::centered_year(spec.year_window, y))
            .collect();
        if clamped > 0 {
            log::warn!("{clamped} counterfactual covariate values fell outside the fitted support and were clamped");
        }
        CounterfactualRows {
            rows: rows.to_vec(),
            x,
            t,
            clamped,
        }
    }

    /// Term values and years of the given births as observed.
    pub fn observed_terms(&self, rows: &[usize]) -> (Vec<Vec<CovariateValue>>, Vec<i32>) {
        let recs = self.dataset.records();
        (
            rows.iter().map(|&i| self.design.spec.term_values(&recs[i])).collect(),
            rows.iter().map(|&i| recs[i].birth_year).collect(),
        )
    }

    /// Risks of the counterfactual births under draw `l`.
    pub fn counterfactual_risks(&self, cf: &CounterfactualRows, l: usize) -> Vec<f64> {
        let theta = self.params.draw(l);
        let alpha = &theta[self.layout.alpha()];
        let p = self.design.p;
        cf.rows
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let eta = dot(&cf.x[k * p..(k + 1) * p], alpha)
                    + self.layout.random_offset(&self.design, theta, i, cf.t[k]);
                logistic(eta)
            })
            .collect()
    }
}

/// Fits the model by MCMC. Chains run in parallel; each chain draws from its
/// own ChaCha stream derived from `mcmc.seed`, so results do not depend on
/// the thread count.
pub fn fit(spec: &ModelSpec, dataset: &Dataset, mcmc: &McmcSettings) -> Result<FitResult> {
    if mcmc.draws == 0 || mcmc.chains == 0 {
        return Err(Error::InvalidInput("need at least one chain and one draw".into()));
    }
    let design = ModelDesign::build(spec, dataset)?;
    let layout = ParamLayout::new(&design, spec.random_effects);
    let ctx = Context::new(spec, &design, layout);

    let outputs = parallel::try_map_range(mcmc.chains, |chain| {
        let mut rng = ChaCha8Rng::seed_from_u64(mcmc.seed);
        rng.set_stream(chain as u64);
        match run_chain(&ctx, mcmc, mcmc.sampler, &mut rng) {
            Ok(out) => Ok(out),
            Err(e) if mcmc.fallback && mcmc.sampler == SamplerKind::PolyaGamma => {
                log::warn!("chain {chain}: {e}; retrying with the Metropolis-within-Gibbs fallback");
                let mut rng = ChaCha8Rng::seed_from_u64(mcmc.seed);
                rng.set_stream(chain as u64 + (1 << 32));
                let mut out = run_chain(&ctx, mcmc, SamplerKind::MetropolisWithinGibbs, &mut rng)
                    .map_err(|e2| Error::Sampler(format!("chain {chain}: {e}; fallback: {e2}")))?;
                out.warning = Some(format!("chain {chain}: Polya-Gamma sampler failed ({e}); used fallback"));
                Ok(out)
            }
            Err(e) => Err(Error::Sampler(format!("chain {chain}: {e}"))),
        }
    })?;

    let n = design.n;
    let dim = layout.dim();
    let mut risk_values = Vec::with_capacity(mcmc.chains * mcmc.draws * n);
    let mut param_values = Vec::with_capacity(mcmc.chains * mcmc.draws * dim);
    let mut info = Vec::with_capacity(mcmc.chains * mcmc.draws);
    let mut warnings = Vec::new();
    let mut acceptance_rates = Vec::new();
    let mut samplers = Vec::new();
    for (chain, out) in outputs.into_iter().enumerate() {
        risk_values.extend(out.risks);
        param_values.extend(out.params);
        info.extend((0..mcmc.draws).map(|iteration| DrawInfo { chain, iteration }));
        acceptance_rates.push(out.acceptance);
        samplers.push(format!("{:?}", out.sampler));
        warnings.extend(out.warning);
    }
    let params = ParameterDraws::new(layout.names(&design), param_values, info.clone())?;
    let risks = PosteriorRisks::new(risk_values, n, info)?;

    let mut reported: Vec<usize> = layout.alpha().collect();
    reported.extend(layout.variances());
    let parameters: Vec<ParameterDiagnostic> = parallel::map_slice(&reported, |&k| {
        let chains = params.by_chain(k);
        let all = params.column(k);
        let m = crate::stats::mean(&all);
        ParameterDiagnostic {
            name: params.names[k].clone(),
            mean: m,
            sd: crate::stats::variance(&all).sqrt(),
            q025: quantile(&all, 0.025),
            q975: quantile(&all, 0.975),
            rhat: split_rhat(&chains),
            ess: effective_sample_size(&chains),
        }
    });
    for p in &parameters {
        if p.rhat > 1.05 {
            let msg = format!("R-hat {:.3} > 1.05 for `{}`", p.rhat, p.name);
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(FitResult {
        model: FittedModel {
            spec: spec.clone(),
            dataset: dataset.clone(),
            design,
            layout,
            params,
            risks,
        },
        diagnostics: FitDiagnostics {
            parameters,
            acceptance_rates,
            samplers,
            warnings,
        },
    })
}

struct Context<'a> {
    priors: &'a Priors,
    design: &'a ModelDesign,
    layout: ParamLayout,
    kappa: Vec<f64>,
    mothers: Vec<Vec<usize>>,
    clusters: Vec<Vec<usize>>,
    districts: Vec<Vec<usize>>,
    states: Vec<Vec<usize>>,
}

impl<'a> Context<'a> {
    fn new(spec: &'a ModelSpec, design: &'a ModelDesign, layout: ParamLayout) -> Self {
        let members = |on: bool, unit: Unit| if on { design.units.members(unit) } else { Vec::new() };
        Context {
            priors: &spec.priors,
            design,
            layout,
            kappa: design.y.iter().map(|y| y - 0.5).collect(),
            mothers: members(layout.mothers > 0, Unit::Mother),
            clusters: members(layout.clusters > 0, Unit::Cluster),
            districts: members(layout.districts > 0, Unit::District),
            states: members(layout.states > 0, Unit::State),
        }
    }
}

struct ChainOutput {
    risks: Vec<f64>,
    params: Vec<f64>,
    acceptance: f64,
    sampler: SamplerKind,
    warning: Option<String>,
}

fn initial_state(ctx: &Context, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let l = &ctx.layout;
    let mut theta = vec![0.0; l.dim()];
    let n = ctx.design.n.max(1) as f64;
    let rate = (ctx.design.y.iter().sum::<f64>() / n).clamp(0.02, 0.98);
    let jitter = |rng: &mut ChaCha8Rng, s: f64| -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        s * z
    };
    theta[0] = (rate / (1.0 - rate)).ln() + jitter(rng, 0.3);
    for k in 1..l.p {
        theta[k] = jitter(rng, 0.1);
    }
    if let Some(k) = l.sigma_mother() {
        theta[k] = rng.random_range(0.3..1.0);
    }
    if let Some(k) = l.sigma_cluster() {
        theta[k] = rng.random_range(0.3..1.0);
    }
    for start in [l.district_cov(), l.state_cov()].into_iter().flatten() {
        theta[start] = rng.random_range(0.3..1.0);
        theta[start + 1] = 0.0;
        theta[start + 2] = rng.random_range(0.03..0.1);
    }
    theta
}

fn run_chain(
    ctx: &Context,
    mcmc: &McmcSettings,
    kind: SamplerKind,
    rng: &mut ChaCha8Rng,
) -> Result<ChainOutput> {
    let design = ctx.design;
    let mut theta = initial_state(ctx, rng);
    let mut eta = ctx.layout.linear_predictor(design, &theta);
    let mut risks = Vec::with_capacity(mcmc.draws * design.n);
    let mut params = Vec::with_capacity(mcmc.draws * theta.len());
    let mut omega = vec![0.0; design.n];
    let mut mh = MetropolisState::new(ctx);
    for iter in 0..mcmc.warmup + mcmc.draws {
        let warming = iter < mcmc.warmup;
        match kind {
            SamplerKind::PolyaGamma => {
                for (w, &e) in omega.iter_mut().zip(&eta) {
                    *w = sample_polya_gamma(rng, e);
                }
                update_joint_block(ctx, &mut theta, &mut eta, &omega, rng)?;
                update_scalar_effects(ctx, &mut theta, &mut eta, &omega, rng, Unit::Cluster);
                update_scalar_effects(ctx, &mut theta, &mut eta, &omega, rng, Unit::Mother);
            }
            SamplerKind::MetropolisWithinGibbs => {
                mh.sweep(ctx, &mut theta, &mut eta, rng, warming, iter);
            }
        }
        rescale_effects(ctx, &mut theta, &mut eta, rng, Unit::Cluster);
        rescale_effects(ctx, &mut theta, &mut eta, rng, Unit::Mother);
        update_variances(ctx, &mut theta, rng)?;
        if let Some(k) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::Sampler(format!("iteration {iter}: parameter {k} became non-finite")));
        }
        if eta.iter().any(|e| !e.is_finite()) {
            return Err(Error::Sampler(format!("iteration {iter}: non-finite linear predictor")));
        }
        if !warming {
            risks.extend(eta.iter().map(|&e| logistic(e)));
            params.extend_from_slice(&theta);
        }
    }
    Ok(ChainOutput {
        risks,
        params,
        acceptance: mh.acceptance_rate(kind),
        sampler: kind,
        warning: None,
    })
}

/// Gaussian draw of fixed effects plus district and state (intercept, slope)
/// pairs given the Polya-Gamma weights and the mother/cluster offsets.
fn update_joint_block(
    ctx: &Context,
    theta: &mut [f64],
    eta: &mut [f64],
    omega: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let l = &ctx.layout;
    let d = ctx.design;
    let p = l.p;
    let dist0 = p;
    let state0 = p + 2 * l.districts;
    let k_dim = state0 + 2 * l.states;
    let mut q = DMatrix::<f64>::zeros(k_dim, k_dim);
    let mut b = DVector::<f64>::zeros(k_dim);
    let u = &d.units;

    let mut idx: Vec<usize> = Vec::with_capacity(4);
    let mut val: Vec<f64> = Vec::with_capacity(4);
    for i in 0..d.n {
        let w = omega[i];
        let x = d.row(i);
        let t = d.t[i];
        // offset from the effects outside this block
        let mut off = 0.0;
        if l.mothers > 0 {
            off += theta[l.mother().start + u.of(Unit::Mother, i)];
        }
        if l.clusters > 0 {
            off += theta[l.cluster().start + u.of(Unit::Cluster, i)];
        }
        let z = ctx.kappa[i] - w * off;
        idx.clear();
        val.clear();
        if l.districts > 0 {
            let k = dist0 + 2 * u.of(Unit::District, i);
            idx.extend([k, k + 1]);
            val.extend([1.0, t]);
        }
        if l.states > 0 {
            let k = state0 + 2 * u.of(Unit::State, i);
            idx.extend([k, k + 1]);
            val.extend([1.0, t]);
        }
        for a in 0..p {
            let wa = w * x[a];
            if wa == 0.0 {
                continue;
            }
            b[a] += x[a] * z;
            for c in a..p {
                q[(c, a)] += wa * x[c];
            }
            for (&ic, &vc) in idx.iter().zip(&val) {
                q[(ic, a)] += wa * vc;
            }
        }
        for (s, (&ia, &va)) in idx.iter().zip(&val).enumerate() {
            b[ia] += va * z;
            for (&ic, &vc) in idx[s..].iter().zip(&val[s..]) {
                let (r, c) = if ic >= ia { (ic, ia) } else { (ia, ic) };
                q[(r, c)] += w * va * vc;
            }
        }
    }
    for (a, v) in d.spec.prior_variances.iter().enumerate() {
        q[(a, a)] += 1.0 / v;
    }
    for (count, start, cov_at) in [
        (l.districts, dist0, l.district_cov()),
        (l.states, state0, l.state_cov()),
    ] {
        if let Some(c) = cov_at {
            let cov = cov_from(theta, c);
            let inv = Matrix2::new(cov[0][0], cov[0][1], cov[1][0], cov[1][1])
                .try_inverse()
                .ok_or_else(|| Error::Sampler("random-effect covariance is singular".into()))?;
            for g in 0..count {
                let k = start + 2 * g;
                q[(k, k)] += inv[(0, 0)];
                q[(k + 1, k)] += inv[(1, 0)];
                q[(k + 1, k + 1)] += inv[(1, 1)];
            }
        }
    }
    // mirror lower triangle
    for c in 0..k_dim {
        for r in c + 1..k_dim {
            q[(c, r)] = q[(r, c)];
        }
    }
    let chol = q
        .cholesky()
        .ok_or_else(|| Error::Sampler("coefficient precision matrix is not positive definite".into()))?;
    let mean = chol.solve(&b);
    let z = DVector::<f64>::from_fn(k_dim, |_, _| rng.sample(StandardNormal));
    let noise = chol
        .l()
        .tr_solve_lower_triangular(&z)
        .ok_or_else(|| Error::Sampler("triangular solve failed".into()))?;
    let draw = mean + noise;

    theta[l.alpha()].copy_from_slice(&draw.as_slice()[..p]);
    theta[l.district()].copy_from_slice(&draw.as_slice()[dist0..state0]);
    theta[l.state()].copy_from_slice(&draw.as_slice()[state0..]);
    let fresh = l.linear_predictor(d, theta);
    eta.copy_from_slice(&fresh);
    Ok(())
}

fn update_scalar_effects(
    ctx: &Context,
    theta: &mut [f64],
    eta: &mut [f64],
    omega: &[f64],
    rng: &mut ChaCha8Rng,
    unit: Unit,
) {
    let l = &ctx.layout;
    let (range, members, var_at) = match unit {
        Unit::Mother => (l.mother(), &ctx.mothers, l.sigma_mother()),
        Unit::Cluster => (l.cluster(), &ctx.clusters, l.sigma_cluster()),
        _ => unreachable!(),
    };
    let Some(var_at) = var_at else { return };
    let prior_prec = 1.0 / theta[var_at];
    for (g, births) in members.iter().enumerate() {
        let k = range.start + g;
        let old = theta[k];
        let mut prec = prior_prec;
        let mut num = 0.0;
        for &i in births {
            let off = eta[i] - old;
            prec += omega[i];
            num += ctx.kappa[i] - omega[i] * off;
        }
        let z: f64 = rng.sample(StandardNormal);
        let new = num / prec + z / prec.sqrt();
        theta[k] = new;
        for &i in births {
            eta[i] += new - old;
        }
    }
}

/// Joint random-walk move on (log variance, effects) of one unit level that
/// rescales every effect together with its standard deviation. The Gaussian
/// prior of the effects cancels against the Jacobian, leaving the exact
/// Bernoulli likelihood ratio and the variance prior on the log scale. The
/// move targets the posterior with the Polya-Gamma weights integrated out,
/// which are redrawn from their conditional at the next sweep. With one to
/// three births per mother the centred Gibbs updates alone mix very slowly
/// in the variance.
fn rescale_effects(ctx: &Context, theta: &mut [f64], eta: &mut [f64], rng: &mut ChaCha8Rng, unit: Unit) {
    const STEP: f64 = 0.5;
    const TRIES: usize = 5;
    let l = &ctx.layout;
    let (range, members, var_at) = match unit {
        Unit::Mother => (l.mother(), &ctx.mothers, l.sigma_mother()),
        Unit::Cluster => (l.cluster(), &ctx.clusters, l.sigma_cluster()),
        _ => unreachable!(),
    };
    let Some(var_at) = var_at else { return };
    let (a, b) = (ctx.priors.variance_shape, ctx.priors.variance_scale);
    let y = &ctx.design.y;
    for _ in 0..TRIES {
        let eps = STEP * rng.sample::<f64, _>(StandardNormal);
        let c = (0.5 * eps).exp();
        let lambda = theta[var_at].ln();
        let mut log_ratio = -a * eps - b * ((-(lambda + eps)).exp() - (-lambda).exp());
        for (g, births) in members.iter().enumerate() {
            let d = (c - 1.0) * theta[range.start + g];
            for &i in births {
                log_ratio += y[i] * d - softplus(eta[i] + d) + softplus(eta[i]);
            }
        }
        let u: f64 = rng.random();
        if u.ln() < log_ratio {
            theta[var_at] *= eps.exp();
            for (g, births) in members.iter().enumerate() {
                let k = range.start + g;
                let d = (c - 1.0) * theta[k];
                theta[k] *= c;
                for &i in births {
                    eta[i] += d;
                }
            }
        }
    }
}

fn sample_inv_gamma(rng: &mut ChaCha8Rng, shape: f64, scale: f64) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / scale)
        .map_err(|e| Error::Sampler(format!("invalid Inverse Gamma parameters: {e}")))?
        .sample(rng);
    Ok(1.0 / g)
}

/// Draws from an Inverse Wishart(scale, df) on 2x2 matrices via the Bartlett
/// decomposition of the corresponding Wishart(scale^-1, df).
pub(crate) fn sample_inv_wishart2(rng: &mut ChaCha8Rng, scale: Matrix2<f64>, df: f64) -> Result<Matrix2<f64>> {
    let v = scale
        .try_inverse()
        .ok_or_else(|| Error::Sampler("Inverse Wishart scale is singular".into()))?;
    let lv = v
        .cholesky()
        .ok_or_else(|| Error::Sampler("Inverse Wishart scale is not positive definite".into()))?
        .l();
    let c1 = ChiSquared::new(df).map_err(|e| Error::Sampler(e.to_string()))?.sample(rng);
    let c2 = ChiSquared::new(df - 1.0).map_err(|e| Error::Sampler(e.to_string()))?.sample(rng);
    let n: f64 = rng.sample(StandardNormal);
    let a = Matrix2::new(c1.sqrt(), 0.0, n, c2.sqrt());
    let la = lv * a;
    let w = la * la.transpose();
    w.try_inverse()
        .ok_or_else(|| Error::Sampler("sampled Wishart matrix is singular".into()))
}

fn update_variances(ctx: &Context, theta: &mut [f64], rng: &mut ChaCha8Rng) -> Result<()> {
    let l = &ctx.layout;
    let pr = ctx.priors;
    for (var_at, range) in [(l.sigma_mother(), l.mother()), (l.sigma_cluster(), l.cluster())] {
        if let Some(k) = var_at {
            let ss: f64 = theta[range.clone()].iter().map(|v| v * v).sum();
            let n = range.len() as f64;
            theta[k] = sample_inv_gamma(rng, pr.variance_shape + n / 2.0, pr.variance_scale + ss / 2.0)?;
        }
    }
    let s0 = Matrix2::new(
        pr.wishart_scale[0][0],
        pr.wishart_scale[0][1],
        pr.wishart_scale[1][0],
        pr.wishart_scale[1][1],
    );
    for (cov_at, range) in [(l.district_cov(), l.district()), (l.state_cov(), l.state())] {
        if let Some(k) = cov_at {
            let mut s = s0;
            let mut count = 0.0;
            for v in theta[range].chunks_exact(2) {
                s[(0, 0)] += v[0] * v[0];
                s[(0, 1)] += v[0] * v[1];
                s[(1, 0)] += v[0] * v[1];
                s[(1, 1)] += v[1] * v[1];
                count += 1.0;
            }
            let cov = sample_inv_wishart2(rng, s, pr.wishart_df + count)?;
            theta[k] = cov[(0, 0)];
            theta[k + 1] = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
            theta[k + 2] = cov[(1, 1)];
        }
    }
    Ok(())
}

/// Adaptive random-walk Metropolis state. Step sizes adapt toward a 0.44
/// acceptance rate during warmup and are frozen afterwards.
struct MetropolisState {
    alpha_steps: Vec<f64>,
    /// mother, cluster, district intercept, district slope, state intercept, state slope
    re_steps: [f64; 6],
    proposals: u64,
    accepted: u64,
    columns: Vec<Vec<(usize, f64)>>,
}

const TARGET_ACCEPT: f64 = 0.44;

impl MetropolisState {
    fn new(ctx: &Context) -> Self {
        let d = ctx.design;
        let mut columns = vec![Vec::new(); d.p];
        for i in 0..d.n {
            for (j, &x) in d.row(i).iter().enumerate() {
                if x != 0.0 {
                    columns[j].push((i, x));
                }
            }
        }
        MetropolisState {
            alpha_steps: vec![0.1; d.p],
            re_steps: [0.3; 6],
            proposals: 0,
            accepted: 0,
            columns,
        }
    }

    fn acceptance_rate(&self, kind: SamplerKind) -> f64 {
        match kind {
            SamplerKind::PolyaGamma => 1.0,
            SamplerKind::MetropolisWithinGibbs if self.proposals == 0 => f64::NAN,
            SamplerKind::MetropolisWithinGibbs => self.accepted as f64 / self.proposals as f64,
        }
    }

    fn record(&mut self, accepted: bool, warming: bool) {
        if !warming {
            self.proposals += 1;
            self.accepted += u64::from(accepted);
        }
    }

    fn adapt(step: &mut f64, accepted: bool, warming: bool, iter: usize) {
        if warming {
            let gain = 1.0 / ((iter + 1) as f64).powf(0.6);
            let a = if accepted { 1.0 } else { 0.0 };
            *step = (step.ln() + gain * (a - TARGET_ACCEPT)).exp().clamp(1e-4, 10.0);
        }
    }

    /// Metropolis step on a single coordinate whose effect on `eta` is
    /// `delta * weight_i` for the listed births.
    #[allow(clippy::too_many_arguments)]
    fn coordinate_step(
        y: &[f64],
        eta: &mut [f64],
        affected: &[(usize, f64)],
        current: f64,
        step: f64,
        log_prior: impl Fn(f64) -> f64,
        rng: &mut ChaCha8Rng,
    ) -> (f64, bool) {
        let z: f64 = rng.sample(StandardNormal);
        let proposal = current + step * z;
        let delta = proposal - current;
        let mut diff = log_prior(proposal) - log_prior(current);
        for &(i, w) in affected {
            let old = eta[i];
            let new = old + delta * w;
            diff += y[i] * (new - old) - softplus(new) + softplus(old);
        }
        if rng.random::<f64>().ln() < diff {
            for &(i, w) in affected {
                eta[i] += delta * w;
            }
            (proposal, true)
        } else {
            (current, false)
        }
    }

    fn sweep(
        &mut self,
        ctx: &Context,
        theta: &mut [f64],
        eta: &mut [f64],
        rng: &mut ChaCha8Rng,
        warming: bool,
        iter: usize,
    ) {
        let l = ctx.layout;
        let d = ctx.design;
        let y = &d.y;
        for j in 0..l.p {
            let var = d.spec.prior_variances[j];
            let (v, acc) = Self::coordinate_step(
                y,
                eta,
                &self.columns[j],
                theta[j],
                self.alpha_steps[j],
                |a| -0.5 * a * a / var,
                rng,
            );
            theta[j] = v;
            Self::adapt(&mut self.alpha_steps[j], acc, warming, iter);
            self.record(acc, warming);
        }
        let scalar_blocks = [
            (l.mother(), &ctx.mothers, l.sigma_mother(), 0),
            (l.cluster(), &ctx.clusters, l.sigma_cluster(), 1),
        ];
        for (range, members, var_at, s) in scalar_blocks {
            let Some(var_at) = var_at else { continue };
            let var = theta[var_at];
            for (g, births) in members.iter().enumerate() {
                let affected: Vec<(usize, f64)> = births.iter().map(|&i| (i, 1.0)).collect();
                let k = range.start + g;
                let (v, acc) = Self::coordinate_step(
                    y,
                    eta,
                    &affected,
                    theta[k],
                    self.re_steps[s],
                    |a| -0.5 * a * a / var,
                    rng,
                );
                theta[k] = v;
                Self::adapt(&mut self.re_steps[s], acc, warming, iter);
                self.record(acc, warming);
            }
        }
        let pair_blocks = [
            (l.district(), &ctx.districts, l.district_cov(), 2),
            (l.state(), &ctx.states, l.state_cov(), 4),
        ];
        for (range, members, cov_at, s) in pair_blocks {
            let Some(cov_at) = cov_at else { continue };
            let cov = cov_from(theta, cov_at);
            let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
            let inv = [[cov[1][1] / det, -cov[0][1] / det], [-cov[1][0] / det, cov[0][0] / det]];
            for (g, births) in members.iter().enumerate() {
                let k = range.start + 2 * g;
                for comp in 0..2 {
                    let affected: Vec<(usize, f64)> = births
                        .iter()
                        .map(|&i| (i, if comp == 0 { 1.0 } else { d.t[i] }))
                        .collect();
                    let other = theta[k + 1 - comp];
                    let log_prior = |a: f64| {
                        let v = if comp == 0 { [a, other] } else { [other, a] };
                        -0.5 * (v[0] * (inv[0][0] * v[0] + inv[0][1] * v[1])
                            + v[1] * (inv[1][0] * v[0] + inv[1][1] * v[1]))
                    };
                    let (v, acc) = Self::coordinate_step(
                        y,
                        eta,
                        &affected,
                        theta[k + comp],
                        self.re_steps[s + comp],
                        log_prior,
                        rng,
                    );
                    theta[k + comp] = v;
                    Self::adapt(&mut self.re_steps[s + comp], acc, warming, iter);
                    self.record(acc, warming);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{
        generate_synthetic, CovariateRule, NestingCounts, SyntheticCovariate, SyntheticSpec,
        VarianceComponents,
    };
    use crate::model::{RandomEffects, SamplerKind};
    use std::collections::BTreeMap;

    fn intercept_only_spec(mothers: usize) -> SyntheticSpec {
        SyntheticSpec {
            nesting: NestingCounts {
                states: 1,
                districts_per_state: 1,
                clusters_per_district: 1,
                mothers_per_cluster: mothers,
                births_per_mother: (1, 1),
            },
            years: vec![2000],
            year_weights: None,
            year_window: None,
            intercept: -2.2,
            year_effects: BTreeMap::new(),
            covariates: vec![],
            variances: VarianceComponents {
                mother: 0.0,
                cluster: 0.0,
                district: [[0.0, 0.0], [0.0, 0.0]],
                state: [[0.0, 0.0], [0.0, 0.0]],
            },
        }
    }

    fn settings(chains: usize, warmup: usize, draws: usize, seed: u64) -> McmcSettings {
        McmcSettings {
            chains,
            warmup,
            draws,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn inverse_wishart_draws_have_the_right_mean() {
        // E[IW(S, df)] = S / (df - p - 1)
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = Matrix2::new(2.0, 0.5, 0.5, 1.0);
        let df = 10.0;
        let n = 40_000;
        let mut acc = Matrix2::zeros();
        for _ in 0..n {
            acc += sample_inv_wishart2(&mut rng, s, df).unwrap();
        }
        let mean = acc / n as f64;
        let expected = s / (df - 3.0);
        for k in 0..4 {
            assert!((mean[k] - expected[k]).abs() < 0.01, "{mean} vs {expected}");
        }
    }

    #[test]
    fn intercept_recovered_without_random_effects() {
        let (ds, _) = generate_synthetic(&intercept_only_spec(2000), 5).unwrap();
        let mut spec = ModelSpec::new(&[]);
        spec.random_effects = RandomEffects::none();
        let fit = fit(&spec, &ds, &settings(2, 200, 400, 1)).unwrap();
        let d = fit.diagnostics.get("(Intercept)").unwrap();
        assert!(d.q025 < -2.2 && -2.2 < d.q975, "{d:?}");
        assert!(d.rhat < 1.05);
        assert_eq!(fit.model.risks.n_draws(), 800);
    }

    #[test]
    fn metropolis_fallback_agrees_with_polya_gamma() {
        let (ds, _) = generate_synthetic(&intercept_only_spec(1500), 8).unwrap();
        let mut spec = ModelSpec::new(&[]);
        spec.random_effects = RandomEffects::none();
        let pg = fit(&spec, &ds, &settings(2, 300, 600, 2)).unwrap();
        let mut mh_settings = settings(2, 300, 600, 2);
        mh_settings.sampler = SamplerKind::MetropolisWithinGibbs;
        let mh = fit(&spec, &ds, &mh_settings).unwrap();
        let a = pg.diagnostics.get("(Intercept)").unwrap();
        let b = mh.diagnostics.get("(Intercept)").unwrap();
        assert!((a.mean - b.mean).abs() < 0.05, "{} vs {}", a.mean, b.mean);
        let rate = mh.diagnostics.acceptance_rates[0];
        assert!(rate > 0.2 && rate < 0.7, "acceptance {rate}");
    }

    #[test]
    fn same_seed_gives_identical_draws() {
        let (ds, _) = generate_synthetic(&intercept_only_spec(50), 1).unwrap();
        let spec = ModelSpec::new(&[]);
        let a = fit(&spec, &ds, &settings(2, 20, 30, 9)).unwrap();
        let b = fit(&spec, &ds, &settings(2, 20, 30, 9)).unwrap();
        assert_eq!(a.model.risks, b.model.risks);
        assert_eq!(a.model.params, b.model.params);
        let c = fit(&spec, &ds, &settings(2, 20, 30, 10)).unwrap();
        assert_ne!(a.model.risks, c.model.risks);
    }

    #[test]
    fn zero_births_returns_the_prior() {
        let schema = intercept_only_spec(1).schema();
        let ds = Dataset::new(schema, vec![]).unwrap();
        let spec = ModelSpec::new(&[]);
        let fit = fit(&spec, &ds, &settings(2, 100, 4000, 3)).unwrap();
        let draws = &fit.model.params;
        let s2 = draws.column(draws.index_of("sigma2_mother").unwrap());
        // Inverse Gamma(3, 2) has mean 2 / (3 - 1) = 1 and sd 1
        let mean = crate::stats::mean(&s2);
        assert!((mean - 1.0).abs() < 0.08, "{mean}");
        let a = draws.column(0);
        let sd = crate::stats::variance(&a).sqrt();
        assert!((sd - 3.0).abs() < 0.15, "intercept prior sd {sd}");
    }

    #[test]
    fn single_mother_leaves_variance_near_prior() {
        let mut s = intercept_only_spec(1);
        s.nesting.births_per_mother = (4, 4);
        let (ds, _) = generate_synthetic(&s, 2).unwrap();
        let spec = ModelSpec::new(&[]);
        let fit = fit(&spec, &ds, &settings(2, 200, 3000, 4)).unwrap();
        let draws = &fit.model.params;
        let s2 = draws.column(draws.index_of("sigma2_mother").unwrap());
        // prior quantiles of IG(3, 2) by simulation
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let prior: Vec<f64> = (0..20_000).map(|_| sample_inv_gamma(&mut rng, 3.0, 2.0).unwrap()).collect();
        for q in [0.25, 0.5, 0.75] {
            let post_q = quantile(&s2, q);
            let prior_q = quantile(&prior, q);
            assert!((post_q / prior_q - 1.0).abs() < 0.25, "q{q}: {post_q} vs {prior_q}");
        }
    }

    #[test]
    fn risks_are_strictly_inside_unit_interval() {
        let (ds, _) = generate_synthetic(&intercept_only_spec(30), 6).unwrap();
        let fit = fit(&ModelSpec::new(&[]), &ds, &settings(1, 10, 10, 0)).unwrap();
        assert!(fit.model.risks.as_slice().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn counterfactual_with_observed_terms_reproduces_risks() {
        let mut s = intercept_only_spec(40);
        s.covariates.push(SyntheticCovariate {
            name: "sex".into(),
            rule: CovariateRule::Categorical {
                levels: vec!["M".into(), "F".into()],
                effects: vec![0.0, 0.5],
                probs: vec![0.5, 0.5],
                probs_by_year: BTreeMap::new(),
            },
        });
        let (ds, _) = generate_synthetic(&s, 6).unwrap();
        let fit = fit(&ModelSpec::new(&["sex"]), &ds, &settings(1, 10, 5, 0)).unwrap();
        let m = &fit.model;
        let rows: Vec<usize> = (0..ds.len()).collect();
        let (vals, years) = m.observed_terms(&rows);
        let cf = m.counterfactual(&rows, &vals, &years);
        for l in 0..m.n_draws() {
            let got = m.counterfactual_risks(&cf, l);
            for (a, b) in got.iter().zip(m.risks.draw(l)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
