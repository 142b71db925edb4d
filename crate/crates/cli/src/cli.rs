use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "riskineq",
    version,
    about = "Individual mortality-risk distributions: fit, measure, compare, adjust, decompose"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known true risks.
    Simulate(SimulateArgs),
    /// Fit the hierarchical logistic model and persist its posterior.
    Fit(FitArgs),
    /// Inequality measures on beta distributions or posterior risks.
    #[command(subcommand)]
    Measure(MeasureCommand),
    /// Per-draw density comparison of two selections.
    Compare(CompareArgs),
    /// Build one counterfactual population and compare it with the target.
    Adjust(AdjustArgs),
    /// Decomposition table: unadjusted, coefficient swap, single-covariate swaps.
    Decompose(DecomposeArgs),
    /// Share of risk variance explained by each covariate, per draw.
    Anova(AnovaArgs),
    /// Run every stage from one JSON config.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Synthetic truth (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Model structure and optional MCMC settings (JSON).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long, value_enum)]
    pub sampler: Option<SamplerArg>,
    #[arg(long)]
    pub seed: u64,
    /// Also write the risk matrix as CSV (one row per draw).
    #[arg(long)]
    pub export_csv: bool,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SamplerArg {
    PolyaGamma,
    Metropolis,
}

#[derive(Debug, Subcommand)]
pub enum MeasureCommand {
    /// Monte Carlo measure table for beta(alpha, beta) risk distributions.
    BetaTable(BetaTableArgs),
    /// Posterior summaries of every measure for a selection of births.
    Posterior(PosteriorMeasureArgs),
}

#[derive(Debug, Args)]
pub struct BetaTableArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 0.5, 0.3, 0.1])]
    pub alphas: Vec<f64>,
    #[arg(long, default_value_t = 10.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub draws: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PosteriorArgs {
    /// Directory written by `fit`.
    #[arg(long, alias = "fit")]
    pub posterior: PathBuf,
}

#[derive(Debug, Args)]
pub struct PosteriorMeasureArgs {
    #[command(flatten)]
    pub posterior: PosteriorArgs,
    /// Births to summarize, e.g. `year=1990 AND wealth=Q1`; all by default.
    #[arg(long, default_value = "*")]
    pub select: String,
    /// Second selection; adds a mortality/survival ordering audit.
    #[arg(long)]
    pub against: Option<String>,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct KdeArgs {
    #[arg(long, default_value_t = riskineq::compare::DEFAULT_GRID)]
    pub grid: usize,
    #[arg(long, value_enum, default_value_t = BoundaryArg::Reflection)]
    pub boundary: BoundaryArg,
    /// Fixed bandwidth instead of Silverman's rule.
    #[arg(long)]
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BoundaryArg {
    Reflection,
    Linear,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub posterior: PosteriorArgs,
    #[arg(long)]
    pub select: String,
    #[arg(long)]
    pub against: String,
    #[arg(long, default_value = "l1")]
    pub metric: String,
    #[command(flatten)]
    pub kde: KdeArgs,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AdjustMethod {
    /// Multiply the source by the ratio of a statistic.
    Scale,
    /// Source covariates with the target's coefficients.
    Coefficients,
    /// Resample one covariate of the source from the target.
    Covariate,
}

#[derive(Debug, Args)]
pub struct AdjustArgs {
    #[command(flatten)]
    pub posterior: PosteriorArgs,
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub target: String,
    #[arg(long, value_enum)]
    pub method: AdjustMethod,
    /// Statistics for the scale method.
    #[arg(long, value_delimiter = ',', default_value = "median")]
    pub statistic: Vec<String>,
    /// Covariate to resample for the covariate method.
    #[arg(long)]
    pub covariate: Option<String>,
    /// Categorical covariates to condition the resampling on.
    #[arg(long, value_delimiter = ',')]
    pub conditional_on: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub kde: KdeArgs,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub posterior: PosteriorArgs,
    #[arg(long)]
    pub base: String,
    #[arg(long)]
    pub target: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub covariates: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub conditional_on: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub kde: KdeArgs,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnovaArgs {
    #[command(flatten)]
    pub posterior: PosteriorArgs,
    /// Grouping fields: categorical covariates, unit names or `year`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub covariates: Vec<String>,
    #[arg(long, default_value = "*")]
    pub select: String,
    /// Separate decompositions per birth year plus a trend table.
    #[arg(long)]
    pub by_year: bool,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub out: PathBuf,
}
