//! Every stage from one JSON config, each in its own subdirectory of the
//! output. Stage status goes to `stages.json`; a failed stage keeps whatever
//! it wrote plus a `FAILED` file with the error.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use riskineq::compare::Metric;
use riskineq::data::Predicate;
use riskineq::measures::Statistic;
use riskineq::model::ModelConfig;

use crate::cli::*;
use crate::commands;
use crate::error::{CliError, CliResult};
use crate::output::{read_json, read_text};

/// Where the data come from: a synthetic truth or an existing CSV.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum DataSource {
    Synthetic { synthetic: PathBuf, seed: u64 },
    Csv { csv: PathBuf, schema: PathBuf },
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FitOverrides {
    pub chains: Option<usize>,
    pub warmup: Option<usize>,
    pub draws: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdeConfig {
    pub grid: usize,
    pub boundary: String,
    pub bandwidth: Option<f64>,
}

impl Default for KdeConfig {
    fn default() -> Self {
        KdeConfig {
            grid: riskineq::compare::DEFAULT_GRID,
            boundary: "reflection".into(),
            bandwidth: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureStage {
    #[serde(default = "all")]
    pub select: String,
    pub against: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CompareStage {
    pub name: String,
    pub select: String,
    pub against: String,
    #[serde(default = "l1")]
    pub metric: String,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AdjustStage {
    pub name: String,
    pub source: String,
    pub target: String,
    pub method: String,
    #[serde(default = "median")]
    pub statistic: Vec<String>,
    pub covariate: Option<String>,
    #[serde(default)]
    pub conditional_on: Vec<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeStage {
    pub base: String,
    pub target: String,
    pub covariates: Vec<String>,
    #[serde(default)]
    pub conditional_on: Vec<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AnovaStage {
    pub covariates: Vec<String>,
    #[serde(default = "all")]
    pub select: String,
    #[serde(default)]
    pub by_year: bool,
}

fn all() -> String {
    "*".into()
}
fn l1() -> String {
    "l1".into()
}
fn median() -> Vec<String> {
    vec!["median".into()]
}

/// Pipeline config. Relative paths resolve against the config file.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed for MCMC and counterfactual resampling.
    pub seed: u64,
    pub data: DataSource,
    /// Model config (JSON with the model structure and MCMC settings).
    pub model: PathBuf,
    #[serde(default)]
    pub fit: FitOverrides,
    #[serde(default)]
    pub kde: KdeConfig,
    pub measure: Option<MeasureStage>,
    #[serde(default)]
    pub compare: Vec<CompareStage>,
    #[serde(default)]
    pub adjust: Vec<AdjustStage>,
    pub decompose: Option<DecomposeStage>,
    pub anova: Option<AnovaStage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub stage: String,
    pub dir: String,
    pub status: StageStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn check_predicate(text: &str, what: &str) -> CliResult<()> {
    text.parse::<Predicate>()
        .map(|_| ())
        .map_err(|e| CliError::Validation(format!("{what} `{text}`: {e}")))
}

fn check_unique(names: impl Iterator<Item = String>, what: &str) -> CliResult<()> {
    let mut seen = std::collections::BTreeSet::new();
    for n in names {
        if n.is_empty() || n.contains(['/', '\\']) || n.starts_with('.') {
            return Err(CliError::Validation(format!("{what} name `{n}` is not a plain directory name")));
        }
        if !seen.insert(n.clone()) {
            return Err(CliError::Validation(format!("duplicate {what} name `{n}`")));
        }
    }
    Ok(())
}

fn boundary(text: &str) -> CliResult<BoundaryArg> {
    match text {
        "reflection" => Ok(BoundaryArg::Reflection),
        "linear" => Ok(BoundaryArg::Linear),
        other => Err(CliError::Validation(format!("kde.boundary `{other}`: expected reflection or linear"))),
    }
}

fn method(text: &str) -> CliResult<AdjustMethod> {
    match text {
        "scale" => Ok(AdjustMethod::Scale),
        "coefficients" => Ok(AdjustMethod::Coefficients),
        "covariate" => Ok(AdjustMethod::Covariate),
        other => Err(CliError::Validation(format!(
            "adjust.method `{other}`: expected scale, coefficients or covariate"
        ))),
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut config: PipelineConfig = read_json(path, "pipeline config")?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut config.data {
            DataSource::Synthetic { synthetic, .. } => resolve(synthetic),
            DataSource::Csv { csv, schema } => {
                resolve(csv);
                resolve(schema);
            }
        }
        resolve(&mut config.model);
        Ok(config)
    }

    /// Checks every stage before anything runs.
    pub fn validate(&self) -> CliResult<()> {
        match &self.data {
            DataSource::Synthetic { synthetic, .. } => {
                riskineq::data::SyntheticSpec::from_json(&read_text(synthetic, "synthetic spec")?)
                    .map_err(|e| CliError::from(e).context(&synthetic.display().to_string()))?;
            }
            DataSource::Csv { csv, schema } => {
                if !csv.is_file() {
                    return Err(CliError::Validation(format!("data file {} does not exist", csv.display())));
                }
                riskineq::data::CovariateSchema::from_json(&read_text(schema, "schema")?)
                    .map_err(|e| CliError::from(e).context(&schema.display().to_string()))?;
            }
        }
        let _: ModelConfig = read_json(&self.model, "model config")?;
        self.kde_args()?.options()?;
        if let Some(m) = &self.measure {
            check_predicate(&m.select, "measure.select")?;
            if let Some(a) = &m.against {
                check_predicate(a, "measure.against")?;
            }
        }
        check_unique(self.compare.iter().map(|c| c.name.clone()), "compare")?;
        for c in &self.compare {
            check_predicate(&c.select, "compare.select")?;
            check_predicate(&c.against, "compare.against")?;
            c.metric
                .parse::<Metric>()
                .map_err(|e| CliError::Validation(format!("compare.metric: {e}")))?;
        }
        check_unique(self.adjust.iter().map(|a| a.name.clone()), "adjust")?;
        for a in &self.adjust {
            check_predicate(&a.source, "adjust.source")?;
            check_predicate(&a.target, "adjust.target")?;
            let m = method(&a.method)?;
            for s in &a.statistic {
                s.parse::<Statistic>()
                    .map_err(|e| CliError::Validation(format!("adjust.statistic: {e}")))?;
            }
            if m == AdjustMethod::Covariate && a.covariate.is_none() {
                return Err(CliError::Validation(format!("adjust `{}`: method covariate needs a covariate", a.name)));
            }
        }
        if let Some(d) = &self.decompose {
            check_predicate(&d.base, "decompose.base")?;
            check_predicate(&d.target, "decompose.target")?;
            if d.covariates.is_empty() {
                return Err(CliError::Validation("decompose.covariates is empty".into()));
            }
        }
        if let Some(a) = &self.anova {
            check_predicate(&a.select, "anova.select")?;
            if a.covariates.is_empty() {
                return Err(CliError::Validation("anova.covariates is empty".into()));
            }
        }
        Ok(())
    }

    fn kde_args(&self) -> CliResult<KdeArgs> {
        Ok(KdeArgs {
            grid: self.kde.grid,
            boundary: boundary(&self.kde.boundary)?,
            bandwidth: self.kde.bandwidth,
        })
    }
}

struct Runner {
    out: PathBuf,
    records: Vec<StageRecord>,
    first_error: Option<CliError>,
}

impl Runner {
    fn stage(&mut self, stage: &str, dir: &str, ready: bool, run: impl FnOnce(&Path) -> CliResult<()>) -> bool {
        let path = self.out.join(dir);
        let marker = path.join("FAILED");
        let _ = std::fs::remove_file(&marker);
        let (status, error) = if !ready {
            (StageStatus::Skipped, Some("an earlier stage failed".to_string()))
        } else {
            log::info!("stage {stage} -> {}", path.display());
            match run(&path) {
                Ok(()) => (StageStatus::Ok, None),
                Err(e) => {
                    let msg = e.to_string();
                    log::error!("stage {stage} failed: {msg}");
                    let _ = std::fs::create_dir_all(&path);
                    let _ = std::fs::write(&marker, format!("{msg}\n"));
                    self.first_error.get_or_insert(e);
                    (StageStatus::Failed, Some(msg))
                }
            }
        };
        self.records.push(StageRecord {
            stage: stage.to_string(),
            dir: dir.to_string(),
            status,
            error,
        });
        status == StageStatus::Ok
    }
}

pub fn run(args: &PipelineArgs) -> CliResult<()> {
    let mut config = PipelineConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Runtime(format!("cannot create output directory {}: {e}", args.out.display())))?;
    let resolved = serde_json::to_string_pretty(&config)?;
    std::fs::write(args.out.join("pipeline.json"), &resolved)?;

    let kde = config.kde_args()?;
    let mut runner = Runner {
        out: args.out.clone(),
        records: Vec::new(),
        first_error: None,
    };

    let (data, schema) = match &config.data {
        DataSource::Synthetic { .. } => {
            let d = args.out.join("data");
            (d.join("data.csv"), d.join("schema.json"))
        }
        DataSource::Csv { csv, schema } => (csv.clone(), schema.clone()),
    };
    let data_ok = match &config.data {
        DataSource::Synthetic { synthetic, seed } => runner.stage("simulate", "data", true, |dir| {
            commands::simulate(&SimulateArgs {
                spec: synthetic.clone(),
                seed: *seed,
                out: dir.to_path_buf(),
            })
        }),
        DataSource::Csv { .. } => true,
    };

    let fit_dir = args.out.join("fit");
    let fit_ok = runner.stage("fit", "fit", data_ok, |dir| {
        commands::fit_command(&FitArgs {
            data,
            schema,
            model: config.model.clone(),
            chains: config.fit.chains,
            warmup: config.fit.warmup,
            draws: config.fit.draws,
            sampler: None,
            seed: config.seed,
            export_csv: false,
            out: dir.to_path_buf(),
        })
    });
    let posterior = || PosteriorArgs {
        posterior: fit_dir.clone(),
    };

    if let Some(m) = &config.measure {
        runner.stage("measure", "measure", fit_ok, |dir| {
            commands::posterior_measure_command(&PosteriorMeasureArgs {
                posterior: posterior(),
                select: m.select.clone(),
                against: m.against.clone(),
                out: dir.to_path_buf(),
            })
        });
    }
    if let Some(a) = &config.anova {
        runner.stage("anova", "anova", fit_ok, |dir| {
            commands::anova_command(&AnovaArgs {
                posterior: posterior(),
                covariates: a.covariates.clone(),
                select: a.select.clone(),
                by_year: a.by_year,
                out: dir.to_path_buf(),
            })
        });
    }
    for c in &config.compare {
        runner.stage("compare", &format!("compare/{}", c.name), fit_ok, |dir| {
            commands::compare_command(&CompareArgs {
                posterior: posterior(),
                select: c.select.clone(),
                against: c.against.clone(),
                metric: c.metric.clone(),
                kde: kde.clone(),
                out: dir.to_path_buf(),
            })
        });
    }
    for a in &config.adjust {
        runner.stage("adjust", &format!("adjust/{}", a.name), fit_ok, |dir| {
            commands::adjust_command(&AdjustArgs {
                posterior: posterior(),
                source: a.source.clone(),
                target: a.target.clone(),
                method: method(&a.method)?,
                statistic: a.statistic.clone(),
                covariate: a.covariate.clone(),
                conditional_on: a.conditional_on.clone(),
                seed: config.seed,
                kde: kde.clone(),
                out: dir.to_path_buf(),
            })
        });
    }
    if let Some(d) = &config.decompose {
        runner.stage("decompose", "decompose", fit_ok, |dir| {
            commands::decompose_command(&DecomposeArgs {
                posterior: posterior(),
                base: d.base.clone(),
                target: d.target.clone(),
                covariates: d.covariates.clone(),
                conditional_on: d.conditional_on.clone(),
                seed: config.seed,
                kde: kde.clone(),
                out: dir.to_path_buf(),
            })
        });
    }

    std::fs::write(args.out.join("stages.json"), serde_json::to_string_pretty(&runner.records)?)?;
    match runner.first_error {
        Some(e) => Err(e.context("pipeline")),
        None => Ok(()),
    }
}
