//! `pcsr`: synthesize patch datasets, train, upsample and evaluate.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "pcsr", version, about = "Point cloud super-resolution toolkit")]
struct Cli {
    /// Root seed; all randomness derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample the surfaces of a manifest and cut ground-truth patches.
    Synth {
        /// Dataset manifest.
        manifest: PathBuf,
        /// Output directory.
        out_dir: PathBuf,
    },
    /// Train on the train split of a synthesized dataset.
    Train(TrainArgs),
    /// Upsample a cloud with a trained checkpoint.
    Upsample {
        checkpoint: PathBuf,
        input: PathBuf,
        output: PathBuf,
        /// Number of 4× passes; each feeds the previous output back in.
        #[arg(long, default_value_t = 1)]
        iterations: u32,
    },
    /// Compare a predicted cloud against ground truth.
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        /// Dense sample of the true surface (defaults to the ground truth).
        #[arg(long)]
        reference: Option<PathBuf>,
        /// F-score distance threshold.
        #[arg(long, default_value_t = 0.01)]
        tau: f64,
        /// Disk centres for the uniformity coefficient.
        #[arg(long, default_value_t = 1000)]
        num_disks: usize,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory written by `synth`.
    dataset_dir: PathBuf,
    /// Checkpoint to write.
    out_checkpoint: PathBuf,
    /// `key = value` settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from this checkpoint instead of initialising.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Loss log (defaults to `<out_checkpoint>.loss.csv`).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    phase1_epochs: Option<u64>,
    #[arg(long)]
    phase2_epochs: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long)]
    checkpoint_interval: Option<u64>,
    /// Extra `key=value` overrides, same keys as the settings file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
