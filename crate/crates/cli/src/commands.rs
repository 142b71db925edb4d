//! One function per subcommand. Each reads its inputs, computes, and writes
//! an output directory with a manifest.

use serde::Serialize;
use serde_json::json;

use riskineq::adjust::{coefficient_swap, covariate_swap, decompose, scale_adjust, triangle_report, Counterfactual, TriangleOp};
use riskineq::anova::{r2_by_year, r2_posterior, trend_table, write_trend_csv, GroupLabeling, R2Posterior};
use riskineq::compare::{density_band, kde_with, Boundary, KdeOptions, Metric};
use riskineq::data::{generate_synthetic, load_csv, select, CovariateSchema, Dataset, SyntheticSpec};
use riskineq::manifest::RunManifest;
use riskineq::measures::{
    beta_sample, beta_table, posterior_measures, summarize_measures, symmetry_audit, Measure, MeasureSet,
    RiskDistribution, Statistic,
};
use riskineq::model::{fit, FittedModel, ModelConfig, SamplerKind, FIT_FILES};
use riskineq::parallel::try_map_range;
use riskineq::stats::Interval;

use crate::cli::*;
use crate::error::{CliError, CliResult};
use crate::output::{predicate, read_json, read_text, OutputDir};

impl KdeArgs {
    pub fn options(&self) -> CliResult<KdeOptions> {
        if self.grid < 16 {
            return Err(CliError::Validation(format!("--grid {} is too coarse (need >= 16)", self.grid)));
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(CliError::Validation(format!("--bandwidth must be positive, got {h}")));
            }
        }
        Ok(KdeOptions {
            grid_size: self.grid,
            boundary: match self.boundary {
                BoundaryArg::Reflection => Boundary::Reflection,
                BoundaryArg::Linear => Boundary::LinearCorrection,
            },
            bandwidth: self.bandwidth,
        })
    }
}

/// A loaded fit and the seed it was sampled with.
struct LoadedFit {
    model: FittedModel,
    seed: u64,
}

fn load_fit(args: &PosteriorArgs) -> CliResult<LoadedFit> {
    if !args.posterior.join("manifest.json").is_file() {
        return Err(CliError::Validation(format!(
            "{} is not a fit directory (no manifest.json); run `riskineq fit` first",
            args.posterior.display()
        )));
    }
    let (model, config, _) =
        FittedModel::load(&args.posterior).map_err(|e| CliError::from(e).context("loading posterior"))?;
    Ok(LoadedFit {
        model,
        seed: config.mcmc.seed,
    })
}

fn record_fit(out: &mut OutputDir, fit: &LoadedFit, args: &PosteriorArgs) -> CliResult<()> {
    out.manifest.dataset_hash = Some(fit.model.dataset.content_hash());
    out.manifest.seed.get_or_insert(fit.seed);
    out.input("posterior_manifest", &args.posterior.join("manifest.json"))
}

fn rows_of(dataset: &Dataset, text: &str, flag: &str) -> CliResult<Vec<usize>> {
    let rows = select(dataset, &predicate(text, flag)?).map_err(|e| CliError::from(e).context(&format!("--{flag}")))?;
    if rows.is_empty() {
        return Err(CliError::Validation(format!("--{flag} `{text}` selects no births")));
    }
    Ok(rows)
}

fn draw_ids(model: &FittedModel) -> Vec<(usize, usize)> {
    model.risks.info().iter().map(|d| (d.chain, d.iteration)).collect()
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let spec = SyntheticSpec::from_json(&read_text(&args.spec, "synthetic spec")?)
        .map_err(|e| CliError::from(e).context(&args.spec.display().to_string()))?;
    let (dataset, truth) = generate_synthetic(&spec, args.seed)?;
    let mut out = OutputDir::create(&args.out, "simulate")?;
    out.input("spec", &args.spec)?;
    out.manifest.seed = Some(args.seed);
    out.manifest.dataset_hash = Some(dataset.content_hash());
    out.manifest.settings = serde_json::to_value(&spec)?;

    riskineq::data::write_csv(&dataset, out.file("data.csv")?)?;
    std::fs::write(out.dir.join("schema.json"), dataset.schema().to_json())?;
    out.adopt("schema.json");
    let mut w = out.csv("true_risks.csv")?;
    w.write_record(["row", "risk", "linear_predictor"])?;
    for (i, (p, eta)) in truth.risks.iter().zip(&truth.linear_predictor).enumerate() {
        w.write_record([i.to_string(), p.to_string(), eta.to_string()])?;
    }
    w.flush()?;
    drop(w);
    out.json("true_fixed_effects.json", &spec.true_fixed_effects())?;
    log::info!("simulated {} births", dataset.len());
    out.finish()
}

pub fn fit_command(args: &FitArgs) -> CliResult<()> {
    let schema = CovariateSchema::from_json(&read_text(&args.schema, "schema")?)
        .map_err(|e| CliError::from(e).context(&args.schema.display().to_string()))?;
    if !args.data.is_file() {
        return Err(CliError::Validation(format!("data file {} does not exist", args.data.display())));
    }
    let dataset = load_csv(&args.data, &schema).map_err(|e| CliError::from(e).context(&args.data.display().to_string()))?;
    let mut config: ModelConfig = read_json(&args.model, "model config")?;
    config.mcmc.seed = args.seed;
    if let Some(c) = args.chains {
        config.mcmc.chains = c;
    }
    if let Some(w) = args.warmup {
        config.mcmc.warmup = w;
    }
    if let Some(d) = args.draws {
        config.mcmc.draws = d;
    }
    if let Some(s) = args.sampler {
        config.mcmc.sampler = match s {
            SamplerArg::PolyaGamma => SamplerKind::PolyaGamma,
            SamplerArg::Metropolis => SamplerKind::MetropolisWithinGibbs,
        };
    }
    let result = fit(&config.model, &dataset, &config.mcmc)?;
    let d = &result.diagnostics;
    log::info!(
        "fit {} births: {} draws, max R-hat {:.3}",
        dataset.len(),
        result.model.n_draws(),
        d.max_rhat()
    );
    result.model.save(&args.out, &config.mcmc, d)?;

    // `save` writes the manifest; add the inputs and the optional export.
    let path = args.out.join("manifest.json");
    let mut manifest = RunManifest::load(&path)?;
    manifest.add_input("data", &args.data)?;
    manifest.add_input("schema", &args.schema)?;
    manifest.add_input("model", &args.model)?;
    if args.export_csv {
        let file = std::fs::File::create(args.out.join("risks.csv"))?;
        result.model.risks.write_csv(std::io::BufWriter::new(file))?;
        manifest.add_outputs(&args.out, &["risks.csv"])?;
    }
    debug_assert!(FIT_FILES.iter().all(|f| manifest.outputs.contains_key(*f)));
    manifest.write(&path)?;
    Ok(())
}

fn write_measure_set(w: &mut csv::Writer<impl std::io::Write>, prefix: &[String], s: &MeasureSet) -> CliResult<()> {
    let mut rec = prefix.to_vec();
    rec.extend(Measure::ALL.iter().map(|m| s.get(*m).to_string()));
    w.write_record(rec)?;
    Ok(())
}

fn measure_header(prefix: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    h.extend(Measure::ALL.iter().map(|m| m.name().to_string()));
    h
}

pub fn beta_table_command(args: &BetaTableArgs) -> CliResult<()> {
    let rows = beta_table(&args.alphas, args.beta, args.draws, args.seed)?;
    let mut out = OutputDir::create(&args.out, "measure beta-table")?;
    out.manifest.seed = Some(args.seed);
    out.manifest.settings = json!({"alphas": args.alphas, "beta": args.beta, "draws": args.draws});
    let mut w = out.csv("beta_table.csv")?;
    w.write_record(measure_header(&["alpha", "beta", "analytic_mean", "scale"]))?;
    for r in &rows {
        for (scale, set) in [("mortality", &r.report.mortality), ("survival", &r.report.survival)] {
            let prefix = [r.alpha.to_string(), r.beta.to_string(), r.analytic_mean.to_string(), scale.to_string()];
            write_measure_set(&mut w, &prefix, set)?;
        }
    }
    w.flush()?;
    drop(w);

    // Ordering audit of the first row against every other row, on the same
    // samples the table was computed from.
    if rows.len() > 1 {
        let sample = |k: usize| -> CliResult<RiskDistribution> {
            Ok(RiskDistribution::new(beta_sample(args.alphas[k], args.beta, args.draws, args.seed, k as u64)?)?)
        };
        let first = sample(0)?;
        let mut w = out.csv("symmetry.csv")?;
        w.write_record([
            "first_alpha",
            "second_alpha",
            "measure",
            "mortality_first",
            "mortality_second",
            "survival_first",
            "survival_second",
            "mortality_conclusion",
            "survival_conclusion",
            "agrees",
        ])?;
        for k in 1..rows.len() {
            let second = sample(k)?;
            for m in Measure::ALL {
                let a = symmetry_audit(&first, &second, m)?;
                w.serialize((
                    args.alphas[0],
                    args.alphas[k],
                    m.name(),
                    a.mortality[0],
                    a.mortality[1],
                    a.survival[0],
                    a.survival[1],
                    a.mortality_conclusion,
                    a.survival_conclusion,
                    a.agrees,
                ))?;
            }
        }
        w.flush()?;
    }
    out.finish()
}

pub fn posterior_measure_command(args: &PosteriorMeasureArgs) -> CliResult<()> {
    let fit = load_fit(&args.posterior)?;
    let model = &fit.model;
    let rows = rows_of(&model.dataset, &args.select, "select")?;
    let reports = posterior_measures(&model.risks, &rows)?;
    let mut out = OutputDir::create(&args.out, "measure posterior")?;
    record_fit(&mut out, &fit, &args.posterior)?;
    out.manifest.settings = json!({"select": args.select, "against": args.against, "births": rows.len()});

    let mut w = out.csv("measures.csv")?;
    w.write_record(["measure", "scale", "median", "lo", "hi"])?;
    for s in summarize_measures(&reports) {
        for (scale, iv) in [("mortality", s.mortality), ("survival", s.survival)] {
            w.serialize((s.measure.name(), scale, iv.median, iv.lo, iv.hi))?;
        }
    }
    w.flush()?;
    drop(w);

    let mut w = out.csv("measure_draws.csv")?;
    w.write_record(measure_header(&["draw", "chain", "iteration", "scale"]))?;
    for (l, (r, (chain, it))) in reports.iter().zip(draw_ids(model)).enumerate() {
        for (scale, set) in [("mortality", &r.mortality), ("survival", &r.survival)] {
            let prefix = [l.to_string(), chain.to_string(), it.to_string(), scale.to_string()];
            write_measure_set(&mut w, &prefix, set)?;
        }
    }
    w.flush()?;
    drop(w);

    if let Some(against) = &args.against {
        let other = rows_of(&model.dataset, against, "against")?;
        let mut w = out.csv("symmetry.csv")?;
        w.write_record(["measure", "agree_fraction", "first_more_unequal_mortality", "first_more_unequal_survival"])?;
        for m in Measure::ALL {
            let audits = try_map_range(model.n_draws(), |l| {
                symmetry_audit(
                    &RiskDistribution::from_draw(&model.risks, l, &rows)?,
                    &RiskDistribution::from_draw(&model.risks, l, &other)?,
                    m,
                )
            })?;
            let n = audits.len() as f64;
            let frac = |f: &dyn Fn(&riskineq::measures::SymmetryAudit) -> bool| {
                audits.iter().filter(|a| f(a)).count() as f64 / n
            };
            w.serialize((
                m.name(),
                frac(&|a| a.agrees),
                frac(&|a| a.mortality_conclusion == riskineq::measures::Conclusion::First),
                frac(&|a| a.survival_conclusion == riskineq::measures::Conclusion::First),
            ))?;
        }
        w.flush()?;
    }
    out.finish()
}

#[derive(Serialize)]
struct CompareSummary {
    metric: String,
    select: String,
    against: String,
    births_select: usize,
    births_against: usize,
    draws: usize,
    divergence: Interval,
    #[serde(skip_serializing_if = "Option::is_none")]
    reverse_kl: Option<Interval>,
}

pub fn compare_command(args: &CompareArgs) -> CliResult<()> {
    let metric: Metric = args
        .metric
        .parse()
        .map_err(|e: riskineq::Error| CliError::Validation(format!("--metric: {e}")))?;
    let opts = args.kde.options()?;
    let fit = load_fit(&args.posterior)?;
    let model = &fit.model;
    let a = rows_of(&model.dataset, &args.select, "select")?;
    let b = rows_of(&model.dataset, &args.against, "against")?;
    let first = |l: usize| RiskDistribution::from_draw(&model.risks, l, &a);
    let second = |l: usize| RiskDistribution::from_draw(&model.risks, l, &b);
    let values = try_map_range(model.n_draws(), |l| {
        let p = kde_with(&first(l)?, &opts)?;
        let q = kde_with(&second(l)?, &opts)?;
        let forward = metric.between(&p, &q)?;
        let reverse = if metric == Metric::Kl { metric.between(&q, &p)? } else { forward };
        Ok::<_, riskineq::Error>((forward, reverse))
    })?;
    let mut out = OutputDir::create(&args.out, "compare")?;
    record_fit(&mut out, &fit, &args.posterior)?;
    out.manifest.settings = json!({"select": args.select, "against": args.against, "metric": metric.name(), "kde": opts});

    let mut w = out.csv("divergence.csv")?;
    if metric == Metric::Kl {
        w.write_record(["draw", "chain", "iteration", "kl_select_against", "kl_against_select"])?;
    } else {
        w.write_record(["draw", "chain", "iteration", metric.name()])?;
    }
    for (l, ((f, r), (chain, it))) in values.iter().zip(draw_ids(model)).enumerate() {
        if metric == Metric::Kl {
            w.serialize((l, chain, it, f, r))?;
        } else {
            w.serialize((l, chain, it, f))?;
        }
    }
    w.flush()?;
    drop(w);
    out.density("density_select.csv", &density_band(model.n_draws(), &opts, first)?)?;
    out.density("density_against.csv", &density_band(model.n_draws(), &opts, second)?)?;
    let forward: Vec<f64> = values.iter().map(|v| v.0).collect();
    let reverse: Vec<f64> = values.iter().map(|v| v.1).collect();
    out.json(
        "summary.json",
        &CompareSummary {
            metric: metric.name().to_string(),
            select: args.select.clone(),
            against: args.against.clone(),
            births_select: a.len(),
            births_against: b.len(),
            draws: model.n_draws(),
            divergence: Interval::from_draws(&forward),
            reverse_kl: (metric == Metric::Kl).then(|| Interval::from_draws(&reverse)),
        },
    )?;
    out.finish()
}

/// Per-draw record of one adjustment.
struct AdjustedDraw {
    b: Option<f64>,
    swapped: bool,
    l1: f64,
    kl: f64,
    triangles: Vec<riskineq::adjust::TriangleReport>,
}

#[derive(Serialize)]
struct AdjustmentSummary {
    adjustment: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    b: Option<Interval>,
    l1_to_target: Interval,
    kl_to_target: Interval,
    /// Share of draws where each triangle inequality holds.
    triangle_holds: std::collections::BTreeMap<String, f64>,
    relative_mean_ordering_ok: f64,
    warnings: Vec<String>,
}

const TRIANGLE_OPS: [TriangleOp; 3] = [TriangleOp::AbsoluteMean, TriangleOp::RelativeMean, TriangleOp::L1];

fn evaluate_adjustment(
    model: &FittedModel,
    opts: &KdeOptions,
    source: &[usize],
    target: &[usize],
    adjusted: &(dyn Fn(usize) -> riskineq::Result<(RiskDistribution, Option<f64>, bool)> + Sync),
) -> CliResult<Vec<AdjustedDraw>> {
    Ok(try_map_range(model.n_draws(), |l| {
        let p0 = RiskDistribution::from_draw(&model.risks, l, source)?;
        let p1 = RiskDistribution::from_draw(&model.risks, l, target)?;
        let (pa, b, swapped) = adjusted(l)?;
        // A swapped scale adjustment moves the target toward the source.
        let reference = if swapped { &p0 } else { &p1 };
        let fa = kde_with(&pa, opts)?;
        let fr = kde_with(reference, opts)?;
        let triangles = TRIANGLE_OPS
            .iter()
            .map(|op| triangle_report(&p0, &pa, &p1, *op, opts))
            .collect::<riskineq::Result<Vec<_>>>()?;
        Ok::<_, riskineq::Error>(AdjustedDraw {
            b,
            swapped,
            l1: Metric::L1.between(&fa, &fr)?,
            kl: Metric::Kl.between(&fa, &fr)?,
            triangles,
        })
    })?)
}

fn file_label(label: &str) -> String {
    label.replace([':', '/', ' '], "_")
}

pub fn adjust_command(args: &AdjustArgs) -> CliResult<()> {
    let opts = args.kde.options()?;
    let statistics: Vec<Statistic> = args
        .statistic
        .iter()
        .map(|s| s.parse().map_err(|e: riskineq::Error| CliError::Validation(format!("--statistic: {e}"))))
        .collect::<CliResult<_>>()?;
    let fit = load_fit(&args.posterior)?;
    let model = &fit.model;
    let source = rows_of(&model.dataset, &args.source, "source")?;
    let target = rows_of(&model.dataset, &args.target, "target")?;

    type Adjusted<'a> = Box<dyn Fn(usize) -> riskineq::Result<(RiskDistribution, Option<f64>, bool)> + Sync + 'a>;
    let mut adjustments: Vec<(String, Adjusted, Vec<String>)> = Vec::new();
    match args.method {
        AdjustMethod::Scale => {
            for stat in statistics {
                let name = match stat {
                    Statistic::Mean => "scale:mean",
                    Statistic::Median => "scale:median",
                };
                let (m, s, t) = (&model, &source, &target);
                let f: Adjusted = Box::new(move |l| {
                    let a = scale_adjust(
                        &RiskDistribution::from_draw(&m.risks, l, s)?,
                        &RiskDistribution::from_draw(&m.risks, l, t)?,
                        stat,
                    )?;
                    Ok((a.adjusted, Some(a.b), a.swapped))
                });
                adjustments.push((name.to_string(), f, Vec::new()));
            }
        }
        AdjustMethod::Coefficients | AdjustMethod::Covariate => {
            let cf: Counterfactual = if args.method == AdjustMethod::Coefficients {
                coefficient_swap(model, &source, &target, args.seed)?
            } else {
                let name = args
                    .covariate
                    .as_deref()
                    .ok_or_else(|| CliError::Validation("--method covariate needs --covariate".into()))?;
                let mut cf = covariate_swap(model, &source, &target, name, &args.conditional_on, args.seed)?;
                cf.label = format!("covariate:{name}");
                cf
            };
            for w in &cf.warnings {
                log::warn!("{}: {w}", cf.label);
            }
            let label = cf.label.clone();
            let warnings = cf.warnings.clone();
            let m = &model;
            let f: Adjusted = Box::new(move |l| Ok((cf.draw(m, l)?, None, false)));
            adjustments.push((label, f, warnings));
        }
    }

    let mut out = OutputDir::create(&args.out, "adjust")?;
    record_fit(&mut out, &fit, &args.posterior)?;
    out.manifest.seed = Some(args.seed);
    out.manifest.settings = json!({
        "source": args.source, "target": args.target, "method": format!("{:?}", args.method).to_lowercase(),
        "statistic": args.statistic, "covariate": args.covariate, "conditional_on": args.conditional_on, "kde": opts,
    });
    let n = model.n_draws();
    out.density("density_source.csv", &density_band(n, &opts, |l| RiskDistribution::from_draw(&model.risks, l, &source))?)?;
    out.density("density_target.csv", &density_band(n, &opts, |l| RiskDistribution::from_draw(&model.risks, l, &target))?)?;

    let mut draws_csv = out.csv("adjust.csv")?;
    draws_csv.write_record(["draw", "chain", "iteration", "adjustment", "b", "swapped", "l1_to_target", "kl_to_target"])?;
    let mut tri_csv = out.csv("triangle.csv")?;
    tri_csv.write_record(["draw", "adjustment", "op", "d01", "d0a", "da1", "slack", "holds", "ordering_ok"])?;
    let mut summaries = Vec::new();
    for (label, f, warnings) in &adjustments {
        let results = evaluate_adjustment(model, &opts, &source, &target, f.as_ref())?;
        for (l, (r, (chain, it))) in results.iter().zip(draw_ids(model)).enumerate() {
            draws_csv.serialize((l, chain, it, label, r.b, r.swapped, r.l1, r.kl))?;
            for t in &r.triangles {
                tri_csv.serialize((l, label, t.op.to_string(), t.d01, t.d0a, t.da1, t.slack, t.holds, t.ordering_ok))?;
            }
        }
        out.density(
            &format!("density_{}.csv", file_label(label)),
            &density_band(n, &opts, |l| f(l).map(|r| r.0))?,
        )?;
        let col = |g: &dyn Fn(&AdjustedDraw) -> f64| results.iter().map(g).collect::<Vec<f64>>();
        let bs: Vec<f64> = results.iter().filter_map(|r| r.b).collect();
        summaries.push(AdjustmentSummary {
            adjustment: label.clone(),
            b: (!bs.is_empty()).then(|| Interval::from_draws(&bs)),
            l1_to_target: Interval::from_draws(&col(&|r| r.l1)),
            kl_to_target: Interval::from_draws(&col(&|r| r.kl)),
            triangle_holds: TRIANGLE_OPS
                .iter()
                .enumerate()
                .map(|(k, op)| {
                    let held = results.iter().filter(|r| r.triangles[k].holds).count();
                    (op.to_string(), held as f64 / n as f64)
                })
                .collect(),
            relative_mean_ordering_ok: results.iter().filter(|r| r.triangles[1].ordering_ok == Some(true)).count()
                as f64
                / n as f64,
            warnings: warnings.clone(),
        });
    }
    draws_csv.flush()?;
    tri_csv.flush()?;
    drop((draws_csv, tri_csv));
    out.json("summary.json", &summaries)?;
    out.finish()
}

pub fn decompose_command(args: &DecomposeArgs) -> CliResult<()> {
    let opts = args.kde.options()?;
    let fit = load_fit(&args.posterior)?;
    let model = &fit.model;
    let base = rows_of(&model.dataset, &args.base, "base")?;
    let target = rows_of(&model.dataset, &args.target, "target")?;
    let rows = decompose(model, &base, &target, &args.covariates, &args.conditional_on, &opts, args.seed)?;
    let mut out = OutputDir::create(&args.out, "decompose")?;
    record_fit(&mut out, &fit, &args.posterior)?;
    out.manifest.seed = Some(args.seed);
    out.manifest.settings = json!({
        "base": args.base, "target": args.target, "covariates": args.covariates,
        "conditional_on": args.conditional_on, "kde": opts,
    });
    let mut w = out.csv("decomposition.csv")?;
    w.write_record(["adjustment", "kl_median", "kl_lo", "kl_hi", "l1_median", "l1_lo", "l1_hi", "warnings"])?;
    for r in &rows {
        for msg in &r.warnings {
            log::warn!("{}: {msg}", r.adjustment);
        }
        w.serialize((
            &r.adjustment,
            r.kl.median,
            r.kl.lo,
            r.kl.hi,
            r.l1.median,
            r.l1.lo,
            r.l1.hi,
            r.warnings.join("; "),
        ))?;
    }
    w.flush()?;
    drop(w);
    let mut w = out.csv("decomposition_draws.csv")?;
    w.write_record(["draw", "chain", "iteration", "adjustment", "kl", "l1"])?;
    for r in &rows {
        for (l, ((kl, l1), (chain, it))) in r.kl_draws.iter().zip(&r.l1_draws).zip(draw_ids(model)).enumerate() {
            w.serialize((l, chain, it, &r.adjustment, kl, l1))?;
        }
    }
    w.flush()?;
    drop(w);
    out.finish()
}

pub fn anova_command(args: &AnovaArgs) -> CliResult<()> {
    let fit = load_fit(&args.posterior)?;
    let model = &fit.model;
    let rows = rows_of(&model.dataset, &args.select, "select")?;
    let mut results: Vec<R2Posterior> = Vec::new();
    for name in &args.covariates {
        let labels = GroupLabeling::from_field(&model.dataset, name)
            .map_err(|e| CliError::from(e).context("--covariates"))?;
        results.push(r2_posterior(&model.risks, &labels, &rows)?);
        if args.by_year {
            results.extend(r2_by_year(&model.risks, &model.dataset, &labels, &rows)?);
        }
    }
    let mut out = OutputDir::create(&args.out, "anova")?;
    record_fit(&mut out, &fit, &args.posterior)?;
    out.manifest.settings = json!({"covariates": args.covariates, "select": args.select, "by_year": args.by_year});
    let mut w = out.csv("r2.csv")?;
    w.write_record(["covariate", "year", "median", "lo", "hi"])?;
    for r in &results {
        w.serialize((&r.covariate, r.year, r.summary.median, r.summary.lo, r.summary.hi))?;
    }
    w.flush()?;
    drop(w);
    let mut w = out.csv("r2_draws.csv")?;
    w.write_record(["covariate", "year", "draw", "r2"])?;
    for r in &results {
        for (l, v) in r.draws.iter().enumerate() {
            w.serialize((&r.covariate, r.year, l, v))?;
        }
    }
    w.flush()?;
    drop(w);
    if args.by_year {
        let yearly: Vec<R2Posterior> = results.iter().filter(|r| r.year.is_some()).cloned().collect();
        let table = trend_table(&yearly)?;
        write_trend_csv(&table, out.file("trend.csv")?)?;
    }
    out.finish()
}
