use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tailorlab::cli::{cmd_analyze, cmd_power, cmd_simulate, RunOptions};

#[derive(Parser)]
#[command(name = "tailorlab", version, about = "Simulate and analyse adaptive-intervention trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config and TAILORLAB_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

impl From<Common> for RunOptions {
    fn from(c: Common) -> Self {
        RunOptions {
            config: c.config,
            seed: c.seed,
            out: c.out,
            threads: c.threads,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a population, run the design and analyse the trial.
    Simulate(Common),
    /// Analyse an existing dataset.
    Analyze {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo power curve for the primary contrast.
    Power(Common),
}

fn main() -> ExitCode {
    let code = match Cli::parse().command {
        Command::Simulate(c) => cmd_simulate(&c.into()),
        Command::Analyze { dataset, common } => cmd_analyze(&dataset, &common.into()),
        Command::Power(c) => cmd_power(&c.into()),
    };
    ExitCode::from(code as u8)
}
