//! `htq` command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "htq",
    version,
    about = "Hyperspherical ternary quantization: train, quantize, evaluate, export"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain and fine-tune a full-precision model.
    Train {
        /// JSON run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for checkpoint, metrics, and manifest.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config worker count (1 = bit-deterministic).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the ternary quantization phase from a checkpoint.
    Quantize {
        /// Checkpoint produced by `train`.
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print test accuracy of a checkpoint or packed model.
    Eval {
        /// Checkpoint (.ckpt) or packed model (.htq).
        model: PathBuf,
        /// Config naming the dataset to evaluate on.
        #[arg(long)]
        config: PathBuf,
        /// Evaluate the ternary operating point of a checkpoint.
        #[arg(long)]
        ternary: bool,
    },
    /// Export a quantized checkpoint as a packed .htq model.
    Export {
        checkpoint: PathBuf,
        /// Output .htq path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write weight histograms, quantization diagnostics, and size report.
    Inspect {
        /// Checkpoint or packed model.
        artifact: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the configured blobs dataset as IDX train/test pairs.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HLA_LOG", "error")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            out,
            seed,
            threads,
        } => htq_core::commands::cmd_train(&config, &out, seed, threads),
        Command::Quantize {
            checkpoint,
            config,
            out,
            seed,
            threads,
        } => htq_core::commands::cmd_quantize(&checkpoint, &config, &out, seed, threads),
        Command::Eval {
            model,
            config,
            ternary,
        } => htq_core::commands::cmd_eval(&model, &config, ternary),
        Command::Export { checkpoint, out } => htq_core::commands::cmd_export(&checkpoint, &out),
        Command::Inspect { artifact, out } => htq_core::commands::cmd_inspect(&artifact, &out),
        Command::GenData { config, out } => htq_core::commands::cmd_gen_data(&config, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
