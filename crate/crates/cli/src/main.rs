//! `nonholo`: simulate, steer, verify and sweep trigonometric sampled-data
//! feedback for driftless systems.

mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nonholo::brockett::Branch;
use nonholo::simulator::Mode;
use nonholo::verify::Suite;

#[derive(Debug, Parser)]
#[command(name = "nonholo", version, about = "Sampled-data trigonometric feedback for driftless systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one closed-loop run and write a CSV trajectory and a JSON summary.
    Simulate(SimulateArgs),
    /// Steer the Brockett integrator between two states in one interval.
    Steer(SteerArgs),
    /// Run the seeded bound-verification suites.
    Verify(VerifyArgs),
    /// Run a grid of simulations in parallel and tabulate decay statistics.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FeedbackKind {
    /// Closed-form feedback for `brockett`, synthesized otherwise.
    Auto,
    ClosedForm,
    Synthesized,
}

#[derive(Debug, Clone, Args)]
pub struct RunOptions {
    /// System name from the registry.
    #[arg(long, default_value = "brockett")]
    pub system: String,
    #[arg(long, default_value_t = 0.5)]
    pub eps: f64,
    #[arg(long, default_value = "sampled", value_parser = parse_mode)]
    pub mode: Mode,
    /// Run length in time units (classical default 20).
    #[arg(long)]
    pub t_final: Option<f64>,
    /// Number of sampling intervals (sampled default 10).
    #[arg(long)]
    pub num_intervals: Option<usize>,
    /// RK4 steps per sampling interval.
    #[arg(long, default_value_t = 256)]
    pub steps_per_interval: usize,
    #[arg(long, default_value = "+", value_parser = parse_branch, allow_hyphen_values = true)]
    pub branch: Branch,
    /// Weights of the quadratic Lyapunov function (default all ones).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub weights: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = FeedbackKind::Auto)]
    pub feedback: FeedbackKind,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunOptions,
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub x0: Vec<f64>,
    /// Trajectory CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary JSON path (stdout when absent).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SteerArgs {
    #[arg(long, default_value = "brockett")]
    pub system: String,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub x0: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0,0,0")]
    pub x1: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub eps: f64,
    #[arg(long, default_value_t = 1, allow_hyphen_values = true)]
    pub k12: i32,
    #[arg(long, default_value = "+", value_parser = parse_branch, allow_hyphen_values = true)]
    pub branch: Branch,
    /// Retry with the opposite frequency sign when the requested one is infeasible.
    #[arg(long)]
    pub any_sign: bool,
    /// RK4 steps used to verify the endpoint.
    #[arg(long, default_value_t = 4096)]
    pub rk4_steps: usize,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value = "all", value_parser = parse_suite)]
    pub suite: Suite,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunOptions,
    /// Sampling periods to sweep.
    #[arg(long = "eps-list", value_delimiter = ',', required = true)]
    pub eps_list: Vec<f64>,
    /// Initial state; repeat for several (`--x0 0,0,1 --x0 1,1,1`).
    #[arg(long = "x0", allow_hyphen_values = true)]
    pub x0: Vec<String>,
    /// Table CSV path (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: nonholo::Error| e.to_string())
}

fn parse_branch(s: &str) -> Result<Branch, String> {
    s.parse().map_err(|e: nonholo::Error| e.to_string())
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse().map_err(|e: nonholo::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => run::simulate(&args),
        Command::Steer(args) => run::steer(&args),
        Command::Verify(args) => run::verify(&args),
        Command::Sweep(args) => run::sweep(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
