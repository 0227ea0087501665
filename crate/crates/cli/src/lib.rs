//! Batch commands for planning, simulated execution and benchmarking.
//!
//! Every command reads a [`RunConfig`], writes fixed-name outputs under the
//! output directory only after it has succeeded, and reports failures via a
//! documented exit code (see [`CliError::exit_code`]).

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pathpainter::benchmark::BenchError;
use pathpainter::generation::GenError;
use pathpainter::PlanError;

pub use config::{Overrides, RunConfig};

pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const BACKEND: i32 = 3;
    pub const NOT_FOUND: i32 = 4;
    pub const NO_PATH: i32 = 5;
    pub const SIM_FAILED: i32 = 6;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error("backend: {0}")]
    Backend(String),
    #[error("goal: {0}")]
    NoGoal(String),
    #[error("sampling: {0}")]
    Sampling(String),
    #[error("plan: {0}")]
    Plan(#[from] PlanError),
    #[error("simulation: {0}")]
    SimFailed(String),
    #[error("output: {0}")]
    Output(String),
}

impl CliError {
    /// 2 config or input, 3 backend, 4 no goal marker or too few benchmark
    /// pairs, 5 no path or bad endpoint, 6 goal not reached, 1 output I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => exit::CONFIG,
            CliError::Backend(_) => exit::BACKEND,
            CliError::NoGoal(_) | CliError::Sampling(_) => exit::NOT_FOUND,
            CliError::Plan(_) => exit::NO_PATH,
            CliError::SimFailed(_) => exit::SIM_FAILED,
            CliError::Output(_) => exit::IO,
        }
    }
}

impl From<GenError> for CliError {
    fn from(e: GenError) -> Self {
        match e {
            GenError::NoGoalFound(_) => CliError::NoGoal(e.to_string()),
            GenError::InvalidConfig(_) | GenError::InvalidRequest(_) => CliError::Config(e.to_string()),
            GenError::StartOutOfBounds { .. } => CliError::Input(e.to_string()),
            _ => CliError::Backend(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::SamplingExhausted { .. } | BenchError::TooFewCells(_) => CliError::Sampling(e.to_string()),
            BenchError::Plan(p) => CliError::Plan(p),
            other => CliError::Input(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pathpainter", version, about = "Plan and evaluate navigation paths on aerial imagery")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Backend: replay:DIR, http:URL or oracle:MASK[,GOAL].
    #[arg(long, global = true)]
    pub backend: Option<String>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub d_sat: Option<f64>,
    #[arg(long, global = true)]
    pub lookahead_m: Option<f64>,
    /// Number of benchmark pairs.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub min_sep_px: Option<f64>,
    /// Worker threads for benchmark pair evaluation.
    #[arg(long, global = true)]
    pub parallel: Option<usize>,
}

impl GlobalArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            out_dir: self.out_dir.clone(),
            seed: self.seed,
            backend: self.backend.clone(),
            lambda: self.lambda,
            d_sat: self.d_sat,
            lookahead_m: self.lookahead_m,
            n: self.n,
            min_sep_px: self.min_sep_px,
            parallel: self.parallel,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan a path from a start to a goal position or an instruction.
    Plan(PlanArgs),
    /// Segmentation metrics for matching files in two directories.
    BenchSeg(BenchSegArgs),
    /// Start/goal path-planning benchmark of a predicted mask.
    BenchPath(BenchPathArgs),
    /// Simulate following a planned path with drifting odometry.
    FollowSim(FollowSimArgs),
    /// Request a traversability mask for the map from the backend.
    FetchMask,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Start position as X,Y in map coordinates.
    #[arg(long, allow_hyphen_values = true)]
    pub start: String,
    /// Goal position as X,Y in map coordinates.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "prompt", required_unless_present = "prompt")]
    pub goal: Option<String>,
    /// Instruction sent to the backend to place the goal.
    #[arg(long)]
    pub prompt: Option<String>,
    /// Read --start and --goal as pixel column,row instead.
    #[arg(long)]
    pub pixel: bool,
}

#[derive(Debug, Args)]
pub struct BenchSegArgs {
    #[arg(long)]
    pub pred_dir: PathBuf,
    #[arg(long)]
    pub gt_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchPathArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
}

#[derive(Debug, Args)]
pub struct FollowSimArgs {
    /// Path JSON written by `plan`.
    #[arg(long)]
    pub path: PathBuf,
    /// Disable global fixes regardless of the config.
    #[arg(long)]
    pub no_fixes: bool,
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = RunConfig::load(cli.global.config.as_deref(), &cli.global.overrides()).and_then(|cfg| {
        match &cli.command {
            Command::Plan(a) => commands::plan(&cfg, a),
            Command::BenchSeg(a) => commands::bench_seg(&cfg, a),
            Command::BenchPath(a) => commands::bench_path(&cfg, a),
            Command::FollowSim(a) => commands::follow_sim(&cfg, a),
            Command::FetchMask => commands::fetch_mask(&cfg),
        }
    });
    match result {
        Ok(summary) => {
            println!("{summary}");
            exit::OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
