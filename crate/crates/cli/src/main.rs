//! `spikeslab`: fit, simulate, reconstruct and evaluate from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 malformed input or invalid
//! arguments, 3 dimension mismatch between inputs.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use spikeslab_ep::experiment::Method;
use spikeslab_ep::network::{FeatureMode, GroupingMode, NonHubPolicy, Symmetrize};
use spikeslab_ep::sim::Correlation;
use spikeslab_ep::{Error, Hyperparams, Prior};
use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),

    #[error("{0}")]
    Usage(String),

    #[error("cannot read {path}: {source}")]
    Input { path: PathBuf, source: std::io::Error },

    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::DimensionMismatch(_)) => 3,
            CliError::Core(
                Error::Parse { .. }
                | Error::Csv(_)
                | Error::Json(_)
                | Error::InvalidParameter { .. }
                | Error::InvalidProbability(_)
                | Error::InvalidGrouping(_)
                | Error::NonFinite(_)
                | Error::TooManyFeatures { .. },
            )
            | CliError::Usage(_)
            | CliError::Input { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "spikeslab", version, about = "Sparse-group spike-and-slab regression by expectation propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to a data file.
    Fit(FitArgs),
    /// Simulate one signal-recovery instance.
    SimulateSignal(SimulateSignalArgs),
    /// Simulate a network and Gaussian data on it.
    SimulateNetwork(SimulateNetworkArgs),
    /// Rank network edges by neighborhood selection.
    Reconstruct(ReconstructArgs),
    /// Score a ranking or a fit against a gold standard and test data.
    Eval(EvalArgs),
    /// Compare the approximate posterior with exact enumeration.
    OracleCompare(OracleArgs),
    /// Run replicated signal-recovery experiments.
    Experiment(ExperimentArgs),
}

/// Hyperparameter overrides; unset values keep the command's defaults.
#[derive(Args, Debug, Clone, Serialize)]
pub struct HyperArgs {
    /// Noise standard deviation assumed by the model.
    #[arg(long)]
    pub sigma0: Option<f64>,
    #[arg(long)]
    pub sigma_slab: Option<f64>,
    /// Prior feature inclusion probability.
    #[arg(long)]
    pub p0: Option<f64>,
    /// Prior group inclusion probability.
    #[arg(long)]
    pub pi0: Option<f64>,
    #[arg(long)]
    pub alpha0: Option<f64>,
    #[arg(long)]
    pub alpha_decay: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub v_replace: Option<f64>,
}

impl HyperArgs {
    pub fn resolve(&self, base: Hyperparams) -> Hyperparams {
        Hyperparams {
            sigma0: self.sigma0.unwrap_or(base.sigma0),
            sigma_slab: self.sigma_slab.unwrap_or(base.sigma_slab),
            p0: self.p0.map(Prior::Constant).unwrap_or(base.p0),
            pi0: self.pi0.map(Prior::Constant).unwrap_or(base.pi0),
            alpha0: self.alpha0.unwrap_or(base.alpha0),
            alpha_decay: self.alpha_decay.unwrap_or(base.alpha_decay),
            tol: self.tol.unwrap_or(base.tol),
            max_iter: self.max_iter.unwrap_or(base.max_iter),
            v_replace: self.v_replace.unwrap_or(base.v_replace),
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FitArgs {
    /// CSV with one header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Name of the response column.
    #[arg(long, default_value = "y")]
    pub response: String,
    /// CSV `feature,group`.
    #[arg(long, conflicts_with = "ungrouped")]
    pub grouping: Option<PathBuf>,
    /// Put every feature in its own group.
    #[arg(long)]
    pub ungrouped: bool,
    /// Scale columns to unit standard deviation after centering.
    #[arg(long)]
    pub standardize: bool,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimulateSignalArgs {
    /// small, medium or large.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub g: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    /// True noise standard deviation.
    #[arg(long)]
    pub sigma0: Option<f64>,
    #[arg(long, default_value = "independent")]
    pub corr: Correlation,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub replicate: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimulateNetworkArgs {
    /// small or large.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub g: Option<usize>,
    #[arg(long)]
    pub h: Option<usize>,
    #[arg(long)]
    pub q: Option<f64>,
    /// Rows in each of the training and test sets.
    #[arg(long, default_value_t = 100)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub replicate: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ReconstructArgs {
    /// CSV with one column per node.
    #[arg(long)]
    pub data: PathBuf,
    /// CSV `node,is_hub,group`.
    #[arg(long)]
    pub nodes: PathBuf,
    #[arg(long, default_value = "hubs")]
    pub features: FeatureMode,
    #[arg(long, default_value = "original")]
    pub grouping: GroupingMode,
    #[arg(long, default_value = "separate")]
    pub nonhub: NonHubPolicy,
    #[arg(long, default_value = "max")]
    pub symmetrize: Symmetrize,
    /// Seeds the label shuffle of `--grouping random`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for the per-node fits.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EvalArgs {
    /// Edge ranking CSV `node_a,node_b,score,coefficient`.
    #[arg(long, requires = "gold", conflicts_with = "fit")]
    pub ranking: Option<PathBuf>,
    /// Gold-standard edge list.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Node count; defaults to the column count of `--test`.
    #[arg(long)]
    pub p: Option<usize>,
    /// Coefficient matrix written by `reconstruct`.
    #[arg(long, requires = "test")]
    pub bhat: Option<PathBuf>,
    /// `fit.json` written by `fit`.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// True coefficients, CSV `feature,beta`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Held-out data for the prediction error.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    pub response: String,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct OracleArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "y")]
    pub response: String,
    #[arg(long, conflicts_with = "ungrouped")]
    pub grouping: Option<PathBuf>,
    #[arg(long)]
    pub ungrouped: bool,
    #[arg(long)]
    pub standardize: bool,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    None,
    /// True noise levels 0, 0.1, 1, 3, 5.
    Noise,
    /// Slab widths 0.1, 1, 2, 5, 10, 100.
    Slab,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ExperimentArgs {
    #[arg(long, default_value = "small")]
    pub preset: String,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub g: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    /// True noise standard deviation of the simulated data.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value = "independent")]
    pub corr: Correlation,
    #[arg(long, default_value_t = 10)]
    pub replicates: u64,
    #[arg(long, value_delimiter = ',', default_value = "dogss,ssep")]
    pub methods: Vec<Method>,
    /// Folds for the cutoff used in the prediction error; 0 uses the full
    /// posterior mean.
    #[arg(long, default_value_t = 10)]
    pub cv_folds: usize,
    #[arg(long, value_enum, default_value_t = Sweep::None)]
    pub sweep: Sweep,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for replicates.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // reconstruct and experiment parallelize over --jobs; everything else
    // runs on one thread
    let jobs = match &cli.command {
        Command::Reconstruct(a) => a.jobs,
        Command::Experiment(a) => a.jobs,
        _ => 1,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return ExitCode::FAILURE;
        }
    };
    let result = pool.install(|| run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Fit(a) => commands::fit(&a),
        Command::SimulateSignal(a) => commands::simulate_signal(&a),
        Command::SimulateNetwork(a) => commands::simulate_network(&a),
        Command::Reconstruct(a) => commands::reconstruct(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::OracleCompare(a) => commands::oracle_compare(&a),
        Command::Experiment(a) => commands::experiment(&a),
    }
}
