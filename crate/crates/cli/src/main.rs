//! `relshift` command-line interface.
//!
//! Exit status is 0 on success, 2 when an input or argument is rejected and 3
//! when the solver breaks down numerically.

mod commands;
mod config;
mod data;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use relshift::simulate::ScenarioName;
use relshift::PenaltyKind;

use crate::config::LambdaArg;

#[derive(Debug, Parser)]
#[command(name = "relshift", version, about = "Relative-shift regression for compositional predictors")]
pub struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "RELSHIFT_THREADS")]
    pub threads: Option<usize>,
    /// JSON run configuration. Flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice (folds, simulated data).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model, at a given lambda or by cross-validation.
    Fit(FitArgs),
    /// Cross-validate over a lambda grid and refit at the selected value.
    Cv(CvArgs),
    /// Write replicate data sets from a built-in scenario.
    Simulate(SimulateArgs),
    /// Monte-Carlo check of the prediction error bound for tree penalties.
    CheckBounds(BoundsArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Compositions: sample IDs in the first column, one column per taxon.
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Response: sample IDs and one value column.
    #[arg(long)]
    pub y: Option<PathBuf>,
    /// Unpenalized covariates, joined to `x` by sample ID.
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Newick tree whose leaves are the taxa of `x`.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// es, l1, cl2 or dl2.
    #[arg(long)]
    pub penalty: Option<PenaltyKind>,
    /// Number of folds.
    #[arg(long)]
    pub k: Option<usize>,
    /// Grid size.
    #[arg(long)]
    pub n_lambda: Option<usize>,
    /// Smallest grid value as a fraction of the largest.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Pick the largest lambda within one standard error of the best.
    #[arg(long)]
    pub one_se: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Penalty level, or `auto` to choose it by cross-validation.
    #[arg(long)]
    pub lambda: Option<LambdaArg>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: ScenarioName,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    /// Override the scenario's signal-to-noise ratio.
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// A scenario with a tree.
    #[arg(long, default_value = "supp_smalltree")]
    pub scenario: ScenarioName,
    /// l1, cl2 or dl2.
    #[arg(long, default_value = "cl2")]
    pub penalty: PenaltyKind,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// Sample size per replicate.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Noise standard deviation; calibrated from `--snr` when absent.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub snr: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<relshift::Error>())
        .any(|e| matches!(e, relshift::Error::Numerical { .. }));
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
