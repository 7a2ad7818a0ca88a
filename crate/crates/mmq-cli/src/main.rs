//! `mmq` — experiment harness for the Markov-modulated multiclass queueing
//! toolkit.
//!
//! Subcommands: `verify` (heavy-traffic and regime checks), `simulate`
//! (per-event trace dumps), `compare` (common-random-number policy costs),
//! `bcp` (Brownian workload benchmark), `curves` (cost-curve series).
//!
//! Exit codes are stable: `0` success, `2` parse failure (command line or
//! config), `3` invariant failure (the config parsed but violates a model
//! or domain constraint), `4` runtime failure (solver, simulation, or I/O).

mod commands;
mod config;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;

/// Failures mapped to exit codes at the process boundary.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or unparseable input (exit 2).
    Parse(String),
    /// The input parsed but violates a model or domain invariant (exit 3).
    Invariant(String),
    /// A solver, simulation, or I/O failure during the run (exit 4).
    Runtime(String),
}

impl CliError {
    /// The process exit code for this failure class.
    #[must_use]
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Parse(_) => 2,
            Self::Invariant(_) => 3,
            Self::Runtime(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Parse(msg) | Self::Invariant(msg) | Self::Runtime(msg) => f.write_str(msg),
        }
    }
}

impl From<mmq_core::Error> for CliError {
    fn from(e: mmq_core::Error) -> Self {
        use mmq_core::Error;
        match e {
            Error::Dimension { .. }
            | Error::InvalidGenerator(_)
            | Error::Reducible(_)
            | Error::InvalidArgument(_)
            | Error::InvalidRegime(_) => Self::Invariant(e.to_string()),
            Error::Solver(_) | Error::Simulation(_) | Error::TraceMismatch(_) => {
                Self::Runtime(e.to_string())
            }
        }
    }
}

/// Command-line surface.
#[derive(Parser)]
#[command(name = "mmq", version, about = "Markov-modulated multiclass queueing experiments")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master-seed override.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Output-directory override.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Replication-count override.
    #[arg(long, global = true, value_name = "K")]
    reps: Option<u64>,

    /// Worker threads for replication-parallel estimation (0 = all cores).
    /// Results do not depend on this value.
    #[arg(long, global = true, value_name = "K")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the heavy-traffic condition, regime coverage, and stationary law.
    Verify,
    /// Dump per-event simulation traces.
    Simulate,
    /// Estimate discounted costs per policy with common random numbers.
    Compare,
    /// Estimate the Brownian workload benchmark J*.
    Bcp {
        /// Also estimate the cμ* cost at the largest configured n and print
        /// the gap to J*.
        #[arg(long)]
        gap: bool,
    },
    /// Emit cost-curve series (undiscounted and discounted) per n.
    Curves,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mmq: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Parse("--config <PATH> is required".to_string()))?;
    let mut config = ExperimentConfig::load(&path)?;
    let out_override = cli.out.as_ref().map(|p| p.to_string_lossy().into_owned());
    config.apply_overrides(cli.seed, cli.reps, out_override.as_deref());
    let model = config.build_model()?;
    let out_dir =
        PathBuf::from(config.run.out_dir.clone().unwrap_or_else(|| "mmq-out".to_string()));
    let ctx = commands::Context { config, model, out_dir, threads: cli.threads.unwrap_or(1) };
    match cli.command {
        Command::Verify => commands::verify(&ctx),
        Command::Simulate => commands::simulate_cmd(&ctx),
        Command::Compare => commands::compare(&ctx),
        Command::Bcp { gap } => commands::bcp(&ctx, gap),
        Command::Curves => commands::curves(&ctx),
    }
}
