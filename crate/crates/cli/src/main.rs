//! `smkl` command-line driver: `solve`, `batch` and `verify`.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 solver
//! divergence, 3 I/O failure, 4 a verification check failed.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "smkl",
    version,
    about = "Sparse multiple kernel learning by iterative kernel thresholding"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one problem and report its support against a reference solution.
    Solve(SolveArgs),
    /// Run a batch of random instances and write histogram, traces and summary.
    Batch(BatchArgs),
    /// Exhaustive lattice check and oracle-equivalence suite.
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the configuration).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: smkl-out].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for batch work; 1 runs sequentially.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Iteration count N.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Step size as a fraction of 1/L, in (0, 2).
    #[arg(long)]
    pub tau_factor: Option<f64>,
    /// group-lasso-paper or gaussian-kernel-paper.
    #[arg(long)]
    pub preset: Option<String>,
    /// Print the resolved configuration and exit without writing anything.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Example {
    /// G = 1, K = 1, y = 1, lambda = 1, alpha0 = 1, tau = 0.5.
    #[value(name = "paper-1d")]
    Scalar,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Default)]
pub enum ReferenceKind {
    /// Oracle for small problems, long run otherwise.
    #[default]
    Auto,
    Oracle,
    LongRun,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: Common,
    /// Built-in example problem.
    #[arg(long, value_enum)]
    pub example: Option<Example>,
    /// Dataset CSV (features then response, no header); needs a [kernel] section.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Index of the generated instance (preset or [experiment] mode).
    #[arg(long, default_value_t = 0)]
    pub instance: usize,
    /// Stop once a step is at most this long in the H-norm.
    #[arg(long)]
    pub stop_tol: Option<f64>,
    #[arg(long, value_enum, default_value_t)]
    pub reference: ReferenceKind,
    /// Also write traces.jsonl.
    #[arg(long)]
    pub traces: bool,
}

#[derive(Args, Debug)]
pub struct BatchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of instances.
    #[arg(long)]
    pub instances: Option<usize>,
    /// Also write traces.jsonl.
    #[arg(long)]
    pub traces: bool,
    /// Only write traces of runs ending with these support sizes.
    #[arg(long, value_delimiter = ',')]
    pub trace_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub trace_stride: Option<usize>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Small,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Verify the stratum lattice for this number of groups (at most 16).
    #[arg(long = "lattice-G", value_name = "G")]
    pub lattice_g: Option<usize>,
    /// Run the oracle-equivalence suite.
    #[arg(long, value_enum)]
    pub oracle_suite: Option<Suite>,
    /// Instances in the oracle suite.
    #[arg(long)]
    pub instances: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(args) => commands::solve(args),
        Command::Batch(args) => commands::batch(args),
        Command::Verify(args) => commands::verify(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
