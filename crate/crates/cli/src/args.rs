use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "usforest",
    version,
    about = "Subsampled tree ensembles with confidence intervals and feature tests"
)]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "USFOREST_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an ensemble and report predictions with confidence intervals.
    Predict(PredictArgs),
    /// Test whether dropping features changes the ensemble's predictions.
    Test(TestArgs),
    /// Run a simulation experiment described by a TOML file.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Headered CSV with numeric columns.
    #[arg(long)]
    pub data: PathBuf,

    /// Name of the response column.
    #[arg(long)]
    pub response: String,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Subsample size [default: ceil(sqrt(n)) + 10]
    #[arg(long)]
    pub k: Option<usize>,

    /// Number of trees [default: nz * nmc, or n with --external]
    #[arg(long)]
    pub m: Option<usize>,

    /// Fixed points used for the variance estimate [default: 50]
    #[arg(long)]
    pub nz: Option<usize>,

    /// Trees per fixed point [default: 500, or m / nz when --m is given without --external]
    #[arg(long)]
    pub nmc: Option<usize>,

    /// Extra uniform trees for the single-tree variance under --external [default: 500]
    #[arg(long)]
    pub nkk: Option<usize>,

    /// Estimate the variance from the ensemble's own trees (default).
    #[arg(long, conflicts_with = "external")]
    pub internal: bool,

    /// Estimate the variance from auxiliary trees.
    #[arg(long)]
    pub external: bool,

    /// Features tried at each split [default: all]
    #[arg(long)]
    pub mtry: Option<usize>,

    /// Smallest node that may be split.
    #[arg(long, default_value_t = 3)]
    pub min_split: usize,

    /// Smallest allowed leaf.
    #[arg(long, default_value_t = 1)]
    pub min_leaf: usize,

    #[arg(long)]
    pub max_depth: Option<usize>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Comma-separated coordinates in feature order; repeatable.
    #[arg(long = "point", required = true, value_name = "X1,X2,...")]
    pub points: Vec<String>,

    #[command(flatten)]
    pub ensemble: EnsembleArgs,

    /// Confidence level of the intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,

    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Features kept by the reduced ensemble, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub reduced: Vec<String>,

    /// CSV of test points in feature order.
    #[arg(
        long,
        conflicts_with = "sample_points",
        required_unless_present = "sample_points"
    )]
    pub points_file: Option<PathBuf>,

    /// Use this many randomly chosen training rows as test points.
    #[arg(long)]
    pub sample_points: Option<usize>,

    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    /// Also run the three randomized-feature comparisons.
    #[arg(long)]
    pub battery: bool,

    #[command(flatten)]
    pub ensemble: EnsembleArgs,

    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment description (TOML).
    pub config: PathBuf,

    /// Results JSON; overrides `[output] results`.
    #[arg(long)]
    pub output: Option<PathBuf>,

    /// Histogram CSV; overrides `[output] histogram`.
    #[arg(long)]
    pub histogram: Option<PathBuf>,
}
