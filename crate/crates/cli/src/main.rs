//! `phiexp`: experiment driver for phi-exponential distribution families.
//!
//! Each subcommand reads a TOML config, writes CSV/JSON artifacts tagged
//! with the config hash, and exits 0 when the configured thresholds pass and
//! 1 when they fail (see [`error::code`] for the error codes).

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use phiexp::FamilyTag;

#[derive(Debug, Parser)]
#[command(name = "phiexp", version, about = "phi-exponential family experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the normalization constants (lambda, c).
    Normalize(Common),
    /// Evaluate a family density.
    Density(Common),
    /// Verify mass, mean and covariance by quadrature.
    Moments(Common),
    /// Compare the G family of one generator with the N family of another.
    Coincidence(Common),
    /// Wasserstein distance between two family members.
    W2(Common),
    /// Points on the Wasserstein geodesic between two members.
    Geodesic(Common),
    /// Run the nonlinear flow and compare with the covariance ODE.
    Evolve(Common),
    /// Family residuals along a flow run.
    Stability(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Grid resolution override (cells or samples).
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Expect the non-power dichotomy: pass when a gap is detected.
    #[arg(long)]
    pub expect_gap: bool,
    /// Family tag override.
    #[arg(long, value_parser = parse_family)]
    pub family: Option<FamilyTag>,
}

fn parse_family(s: &str) -> Result<FamilyTag, String> {
    s.parse().map_err(|e: phiexp::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Normalize(c) => ("normalize", c),
        Command::Density(c) => ("density", c),
        Command::Moments(c) => ("moments", c),
        Command::Coincidence(c) => ("coincidence", c),
        Command::W2(c) => ("w2", c),
        Command::Geodesic(c) => ("geodesic", c),
        Command::Evolve(c) => ("evolve", c),
        Command::Stability(c) => ("stability", c),
    };
    match commands::run(name, common) {
        Ok(passed) => {
            println!("{name}: {}", if passed { "pass" } else { "FAIL" });
            ExitCode::from(if passed { error::code::PASS } else { error::code::THRESHOLD_FAILED } as u8)
        }
        Err(e) => {
            eprintln!("phiexp {name}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
