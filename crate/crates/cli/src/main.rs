use anyhow::Result;
use clap::{Parser, Subcommand};
use sdhn_cli::{cmd_ablate, cmd_eval, cmd_train};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "sdhn",
    about = "Stochastic hypergraph coordination for multi-agent RL: train, evaluate, ablate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a run from a config file into an output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override train.seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint greedily over seeded episodes.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional per-step episode trace (line-delimited JSON).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run the base config plus ablation variants with shared seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset of: no-skew, det-edges, plain-mappo.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, out, seed } => cmd_train(&config, &out, seed),
        Command::Eval { checkpoint, config, episodes, seed, trace } => {
            cmd_eval(&checkpoint, &config, episodes, seed, trace.as_deref()).map(|_| ())
        }
        Command::Ablate { config, out, variants } => cmd_ablate(&config, &out, &variants),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
