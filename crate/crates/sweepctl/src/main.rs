//! `sweepctl`: batch front end for the sweeping-control solver and certifier.

#![allow(clippy::needless_range_loop)]

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const VALIDATION: u8 = 2;
    pub const SOLVE: u8 = 3;
    pub const CERTIFICATE: u8 = 4;
}

#[derive(Debug, Parser)]
#[command(name = "sweepctl", version, about = "Time-optimal bilevel sweeping control: simulate, solve, certify")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario and run configuration (TOML); the straight corridor when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Number of grid intervals N.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Seed for initial guesses and random samples.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Drop penalty levels above this value.
    #[arg(long, global = true)]
    pub rho_max: Option<f64>,
    /// Drop smoothing levels above this value.
    #[arg(long, global = true)]
    pub gamma_max: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the scenario against the standing assumptions.
    Validate,
    /// Integrate a control profile with the smoothed and catching-up schemes.
    Simulate(SimulateArgs),
    /// Solve the bilevel problem by smoothing and penalty continuation.
    Solve,
    /// Extract multipliers from a solution and evaluate the necessary conditions.
    Certify(CertifyArgs),
    /// Compare the support term, the lower solver and the bilevel solver with brute-force references.
    Oracle(OracleArgs),
    /// Distance between smoothed and catching-up trajectories across the smoothing schedule.
    SweepGamma(SweepArgs),
}

#[derive(Debug, Args)]
pub struct ControlsSource {
    /// Control CSV with columns omega,v_x,v_y,u_x,u_y,u0; one row per interval.
    #[arg(long, conflicts_with = "demo")]
    pub controls: Option<PathBuf>,
    /// Boundary-riding demo profile instead of a file.
    #[arg(long)]
    pub demo: bool,
    /// Initial lower state `x,y`.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub x_init: Option<[f64; 2]>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: ControlsSource,
    /// Also write the smoothing-convergence sequence.
    #[arg(long)]
    pub gamma_sweep: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: ControlsSource,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    /// Solution JSON written by `solve`.
    #[arg(long)]
    pub solution: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Random samples for the support-term comparison.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// Skip the bilevel comparison, which runs a full solve.
    #[arg(long)]
    pub skip_bilevel: bool,
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected `x,y`, got `{s}`"));
    }
    let a = parts[0].trim().parse::<f64>().map_err(|e| e.to_string())?;
    let b = parts[1].trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok([a, b])
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    ExitCode::from(commands::run(&cli))
}
