//! `earlygate`: early-abort gating experiments from the command line.
//!
//! Exit codes: 0 on success, 2 for usage or parameter validation problems,
//! 3 for data errors (unreadable or schema-violating manifests, I/O).
//! Every subcommand is deterministic for a fixed master seed, independent
//! of the thread count.

mod config;
mod evaluate;
mod orchestrate;
mod output;
mod pfi_demo;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "earlygate",
    version,
    about = "Early-abort gating, seed-restart policies, and generation-cost analysis for iterative image generators"
)]
struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master RNG seed; all randomness derives from it through named
    /// substreams. Overrides the EARLYGATE_SEED environment variable.
    #[arg(long, global = true, env = "EARLYGATE_SEED", value_name = "SEED")]
    rng_seed: Option<u64>,

    /// Worker threads for parallel simulation (0 = automatic). Results do
    /// not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the time-saving cost model over critical timesteps, comparing
    /// Monte Carlo estimates against the closed form.
    Simulate(simulate::SimulateArgs),
    /// Replay recorded generations through the gated restart policy and
    /// report steps saved against the ungated baseline.
    Orchestrate(orchestrate::OrchestrateArgs),
    /// Compute fidelity metrics (MG-N, localization, detector confusion)
    /// over a generation manifest.
    Evaluate(evaluate::EvaluateArgs),
    /// Project noisy latents to their predicted final state and report the
    /// reconstruction error per critical timestep.
    PfiDemo(pfi_demo::PfiDemoArgs),
}

/// Error carrying the process exit code.
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<earlygate_core::Error> for CliError {
    fn from(err: earlygate_core::Error) -> Self {
        match err {
            earlygate_core::Error::Data(_) => CliError::data(err.to_string()),
            _ => CliError::usage(err.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn run(cli: Cli) -> CliResult<()> {
    let file = config::load(cli.config.as_deref())?;
    let master_seed = cli.rng_seed.or(file.master_seed).unwrap_or(42);
    let threads = cli.threads.or(file.threads).unwrap_or(0);
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate(args) => simulate::run(args, &file.simulate, master_seed),
        Command::Orchestrate(args) => orchestrate::run(args, &file.orchestrate, master_seed),
        Command::Evaluate(args) => evaluate::run(args, &file.evaluate, master_seed),
        Command::PfiDemo(args) => pfi_demo::run(args, &file.pfi_demo, master_seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}
