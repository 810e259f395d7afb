//! `innsteg`: train, conceal, reveal and detect from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error (unreadable
//! or missing inputs), 4 numeric divergence, 5 dimension mismatch.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use innsteg::Error;

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "innsteg", version, about = "Invertible-network image hiding and zero-shot steganalysis")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for training and evaluation noise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Detection threshold in dB (default 25).
    #[arg(long, global = true, allow_negative_numbers = true)]
    threshold: Option<f64>,
    /// Residual-augmentation weight in [0, 1].
    #[arg(long, global = true)]
    lam: Option<f64>,
    /// Checkpoint to load.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a directory of images.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Hide a secret image inside a cover image.
    Conceal {
        #[arg(long)]
        cover: PathBuf,
        #[arg(long)]
        secret: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run the network backwards on an image.
    Reveal {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Classify an image or every image in a directory.
    Detect {
        target: PathBuf,
        /// Print a JSON array instead of tab-separated lines.
        #[arg(long)]
        json: bool,
    },
    /// Detection accuracy on covers and self-generated stegos.
    Evaluate {
        /// Directory of cover images.
        #[arg(long)]
        covers: PathBuf,
        /// Directory of secrets, paired with covers in sorted order.
        #[arg(long)]
        secrets: PathBuf,
        /// Center-crop every image to this size first.
        #[arg(long)]
        crop: Option<usize>,
        /// Use LSB-matching stegos at this payload instead of the network's.
        #[arg(long)]
        lsb: Option<f64>,
    },
    /// PSNR between each image and its reveal output.
    Histogram {
        images: PathBuf,
        #[arg(long, default_value = "unlabeled")]
        label: String,
        #[arg(long)]
        crop: Option<usize>,
    },
    /// Write a procedural image set.
    Synth {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 40)]
        size: usize,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Domain(_) => 2,
        Error::Data(_) | Error::Format(_) | Error::Image { .. } | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 3,
        Error::NonFinite(_) => 4,
        Error::Dimension(_) => 5,
    }
}

fn run(cli: Cli) -> innsteg::Result<()> {
    let dataset_dir = match &cli.command {
        Command::Train { dataset } => dataset.clone(),
        _ => None,
    };
    let overrides = Overrides {
        seed: cli.seed,
        output_dir: cli.out,
        threshold_db: cli.threshold,
        lam: cli.lam,
        dataset_dir,
        checkpoint: cli.checkpoint,
    };
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Train { .. } => commands::train_cmd(&cfg),
        Command::Conceal { cover, secret, output } => commands::conceal_cmd(&cfg, &cover, &secret, &output),
        Command::Reveal { input, output } => commands::reveal_cmd(&cfg, &input, &output),
        Command::Detect { target, json } => commands::detect_cmd(&cfg, &target, json),
        Command::Evaluate { covers, secrets, crop, lsb } => commands::evaluate_cmd(&cfg, &covers, &secrets, crop, lsb),
        Command::Histogram { images, label, crop } => commands::histogram_cmd(&cfg, &images, &label, crop),
        Command::Synth { count, size } => commands::synth_cmd(&cfg, count, size),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
