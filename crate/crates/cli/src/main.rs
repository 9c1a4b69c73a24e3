//! Command-line interface for the sensing-area pipeline.
//!
//! One binary with five subcommands: `gen` builds synthetic datasets,
//! `train` fits the network, `eval` scores a checkpoint and renders
//! overlays, `predict` runs single-sample inference, and `selftest`
//! executes the built-in oracle suites. Values resolve flag over config
//! file over default; every run leaves a `run.json` it can be reproduced
//! from. Exit codes: 0 success, 1 internal failure, 2 usage error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::AppError;

#[derive(Parser)]
#[command(
    name = "probesight",
    version,
    about = "Sensing-area localization: synthetic stereo data, three-branch network, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stereo dataset with ground-truth labels
    Gen(GenArgs),
    /// Train the network on a generated dataset
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split and write report plus overlays
    Eval(EvalArgs),
    /// Run single-sample inference and print the 2D/3D prediction
    Predict(PredictArgs),
    /// Run the built-in oracle suites and print pass/fail per suite
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct SharedArgs {
    /// Flat JSON config file; flags override file values, file overrides defaults
    #[arg(long, value_name = "PATH", global = true)]
    config: Option<PathBuf>,
    /// Master RNG seed [default: 0]
    #[arg(long, value_name = "INT", global = true)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    shared: SharedArgs,
    /// Output dataset directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Training split size [default: 8]
    #[arg(long, value_name = "INT")]
    train: Option<usize>,
    /// Validation split size [default: 2]
    #[arg(long, value_name = "INT")]
    val: Option<usize>,
    /// Test split size [default: 2]
    #[arg(long, value_name = "INT")]
    test: Option<usize>,
    /// Square image side in pixels [default: 256]
    #[arg(long, value_name = "INT")]
    image_size: Option<usize>,
    /// Focal length in pixels [default: 300]
    #[arg(long, value_name = "FLOAT")]
    focal_px: Option<f64>,
    /// Stereo baseline in mm [default: 4.5]
    #[arg(long, value_name = "FLOAT")]
    baseline_mm: Option<f64>,
    /// Probe-axis points stored per sample [default: 50]
    #[arg(long, value_name = "INT")]
    axis_points: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    shared: SharedArgs,
    /// Dataset directory produced by `gen`
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Output directory for checkpoints and the epoch log
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Resume training from this checkpoint
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Training epochs [default: 50]
    #[arg(long, value_name = "INT")]
    epochs: Option<usize>,
    /// Mini-batch size [default: 8]
    #[arg(long, value_name = "INT")]
    batch_size: Option<usize>,
    /// Square side inputs are resized to, multiple of 32 [default: 256]
    #[arg(long, value_name = "INT")]
    target_size: Option<usize>,
    /// Enabled branches, comma-separated [default: image,depth,axis]
    #[arg(long, value_name = "LIST")]
    branches: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    shared: SharedArgs,
    /// Dataset directory produced by `gen`
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Split to evaluate: train, val, or test [default: test]
    #[arg(long, value_name = "SPLIT")]
    split: Option<String>,
    /// Checkpoint to evaluate
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Output directory for the report and overlays
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Evaluation batch size [default: 8]
    #[arg(long, value_name = "INT")]
    batch_size: Option<usize>,
    /// Square side inputs are resized to, multiple of 32 [default: 256]
    #[arg(long, value_name = "INT")]
    target_size: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    shared: SharedArgs,
    /// Dataset directory produced by `gen`
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Split to draw the sample from: train, val, or test [default: test]
    #[arg(long, value_name = "SPLIT")]
    split: Option<String>,
    /// Sample id to predict [default: first sample of the split]
    #[arg(long, value_name = "ID")]
    sample: Option<String>,
    /// Checkpoint to load
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Output directory for run.json and the optional overlay
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Square side inputs are resized to, multiple of 32 [default: 256]
    #[arg(long, value_name = "INT")]
    target_size: Option<usize>,
    /// Also write a ground-truth/prediction overlay image
    #[arg(long)]
    overlay: bool,
}

#[derive(Args)]
struct SelftestArgs {
    #[command(flatten)]
    shared: SharedArgs,
    /// Optional directory for run.json [default: none written]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => commands::cmd_gen(args),
        Command::Train(args) => commands::cmd_train(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::Predict(args) => commands::cmd_predict(args),
        Command::Selftest(args) => commands::cmd_selftest(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(AppError::Internal(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
