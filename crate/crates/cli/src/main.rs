mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::Failure;

#[derive(Parser, Debug)]
#[command(name = "gnep", version, about = "Solvers and sharpness diagnostics for jointly convex GNEPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a seeded random quadratic instance
    Generate(GenerateArgs),
    /// Solve with the proximal point method or extragradient
    Solve(SolveArgs),
    /// Weak sharpness, error bound and linear conditioning report
    Diagnose(DiagnoseArgs),
    /// Termination bound d0^2 eps^2 / gamma^2
    Bound(BoundArgs),
    /// Load instances or fixtures and re-check their declared facts
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Instance file (repeatable)
    #[arg(long = "instance")]
    pub instances: Vec<PathBuf>,
    /// Built-in fixture: E1, E0, random-sharp-K, random-degenerate-K (repeatable)
    #[arg(long = "fixture")]
    pub fixtures: Vec<String>,
    /// Worker threads when several inputs are given
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Report path; the report goes to stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 2)]
    pub players: usize,
    /// Strategy dimension of every player
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Target lower bound on the smallest eigenvalue of C + C^T
    #[arg(long = "delta-floor", default_value_t = 0.5)]
    pub delta_floor: f64,
    /// Instance path; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ppa,
    Extragradient,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = Method::Ppa)]
    pub method: Method,
    /// Regularization parameter (default: instance value, else delta/2)
    #[arg(long)]
    pub a: Option<f64>,
    /// Proximal parameter; a comma list gives a sequence that holds its last value
    #[arg(long, value_delimiter = ',')]
    pub r: Vec<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Starting point, comma separated (default: upper corner of the set)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Vec<f64>,
    /// Termination tolerance on the gap (ppa) or VI residual (extragradient)
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long = "max-iters")]
    pub max_iters: Option<usize>,
    /// CSV trace path (ppa only)
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub a: Option<f64>,
    /// Grid points per dimension on the coarse grid
    #[arg(long)]
    pub grid: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BoundArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub r: Vec<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Vec<f64>,
    /// Compare against the termination index in this CSV trace
    #[arg(long, conflicts_with = "run")]
    pub trace: Option<PathBuf>,
    /// Run the proximal point method and compare its termination index
    #[arg(long)]
    pub run: bool,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long = "max-iters")]
    pub max_iters: Option<usize>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub input: InputArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let code = Failure::exit_code(&e);
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
