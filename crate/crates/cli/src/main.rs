mod artifacts;
mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{cmd_simulate, cmd_synthesize, cmd_verify, Common, DEFAULT_SUITE_CASES};

/// Distributed observer synthesis, certification and simulation.
#[derive(Debug, Parser)]
#[command(name = "distobs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Design gains and round count, then run every certificate.
    Synthesize {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Synthesize and simulate; writes trace.csv and summary.json.
    Simulate {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the certificate suite on a scenario, or on random scenarios.
    Verify {
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        /// Random scenarios to check when no config is given.
        #[arg(long, default_value_t = DEFAULT_SUITE_CASES)]
        cases: usize,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Seed for default initial conditions and random scenarios.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; defaults to the config's output dir, then `out`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Write per-round consensus errors and print the full check table.
    #[arg(long)]
    verbose: bool,
    /// Design file whose quotient gains replace the synthesized ones.
    #[arg(long, value_name = "PATH")]
    gains: Option<PathBuf>,
}

impl From<CommonArgs> for Common {
    fn from(a: CommonArgs) -> Self {
        Common {
            seed: a.seed,
            out: a.out,
            verbose: a.verbose,
            gains: a.gains,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synthesize { config, common } => cmd_synthesize(&config, &common.into()),
        Command::Simulate { config, common } => cmd_simulate(&config, &common.into()),
        Command::Verify {
            config,
            cases,
            common,
        } => cmd_verify(config.as_deref(), cases, &common.into()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.record());
            ExitCode::from(f.code as u8)
        }
    }
}
