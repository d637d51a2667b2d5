mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::keys_help;

#[derive(Parser)]
#[command(name = "amlp", version, about = "Adaptive masked-patch pretraining on synthetic lesion images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file (defaults apply to missing keys)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parent directory of the run directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset
    #[command(after_help = keys_help())]
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain the autoencoder with adaptive masked-patch selection
    #[command(after_help = keys_help())]
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by gen-data
        #[arg(long)]
        data: PathBuf,
        /// Continue from the run directory's checkpoint if present
        #[arg(long)]
        resume: bool,
        /// Save a checkpoint every N epochs (0 = only at the end)
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
        /// Stop after this many epochs in total (for staged runs)
        #[arg(long)]
        stop_after: Option<usize>,
        /// Worker threads per batch
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Fine-tune a segmentation head on the labeled subset
    #[command(after_help = keys_help())]
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Pretrained checkpoint (default: the run directory's pretrain.ckpt)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Start from a freshly initialised encoder
        #[arg(long, conflicts_with = "checkpoint")]
        no_pretrain: bool,
    },
    /// Evaluate a fine-tuned model on the test split
    #[command(after_help = keys_help())]
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Fine-tuned checkpoint (default: the run directory's finetuned.ckpt)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare the three masking strategies over the configured seeds
    #[command(after_help = keys_help())]
    AblateMasking {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Finite-difference check of the analytic gradients on tiny models
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        models: usize,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
    /// Print H1, H2 and H3 for distribution tables
    #[command(after_help = "DIST is inline JSON or a file holding {\"p\": table, \"q\": table, \"p_hat\": table}; \
                            q and p_hat default to p. Tables are nested arrays of probabilities.")]
    Entropy {
        #[arg(long)]
        dist: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { common } => commands::gen_data(&common.config, &common.out),
        Command::Pretrain { common, data, resume, checkpoint_every, stop_after, workers } => {
            commands::pretrain(&common.config, &common.out, &data, resume, checkpoint_every, stop_after, workers)
        }
        Command::Finetune { common, data, checkpoint, no_pretrain } => {
            commands::finetune(&common.config, &common.out, &data, checkpoint, no_pretrain)
        }
        Command::Eval { common, data, checkpoint } => commands::eval(&common.config, &common.out, &data, checkpoint),
        Command::AblateMasking { common, data, workers } => {
            commands::ablate(&common.config, &common.out, &data, workers)
        }
        Command::GradCheck { seed, models, tolerance } => commands::grad_check(seed, models, tolerance),
        Command::Entropy { dist } => commands::entropy(&dist),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_line());
            ExitCode::from(f.code as u8)
        }
    }
}
