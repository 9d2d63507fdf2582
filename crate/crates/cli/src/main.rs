//! `vitfield`: dataset generation and ingestion, training, cross-validation,
//! evaluation and attention maps.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;
use vitfield::cv::CvError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numeric(String),
}

impl From<CvError> for CliError {
    fn from(e: CvError) -> Self {
        match e {
            CvError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

macro_rules! usage_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Usage(e.to_string())
            }
        }
    )*};
}
usage_from!(
    vitfield::ConfigError,
    vitfield::data::DataError,
    vitfield::model::ModelError,
    vitfield::viz::VizError,
    vitfield::tensor::TensorError
);

#[derive(Parser)]
#[command(
    name = "vitfield",
    version,
    about = "Vision transformer crop and weed classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a procedural five-class dataset in folder layout plus manifest.tsv.
    GenData(GenDataArgs),
    /// Crop Pascal-VOC annotated images into a folder-layout dataset.
    Ingest(IngestArgs),
    /// Train one model on a single stratified hold-out split.
    Train(TrainArgs),
    /// Leave-k-out cross-validation over five stratified folds.
    Crossval(CrossvalArgs),
    /// Evaluate a checkpoint on a folder-layout dataset.
    Evaluate(EvaluateArgs),
    /// Render class-token attention maps for one image.
    Attention(AttentionArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write into a non-empty directory.
    #[arg(long)]
    pub force: bool,
    /// key=value settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct IngestArgs {
    /// Directory of PNG/PPM images.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Directory of `<image stem>.xml` files; defaults to the image directory.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Pad classes below this count with flip/rotation variants.
    #[arg(long)]
    pub balance: Option<usize>,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Hyperparameters shared by `train` and `crossval`.
#[derive(Args)]
pub struct Hyper {
    #[arg(long)]
    pub lr: Option<f64>,
    /// Learning-rate reduction factor on a validation-loss plateau.
    #[arg(long)]
    pub factor: Option<f64>,
    /// Epochs without a lower validation loss before the rate is reduced.
    #[arg(long)]
    pub lr_patience: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs without a higher validation F1 before training stops.
    #[arg(long)]
    pub patience: Option<usize>,
    /// `on` or `off`.
    #[arg(long)]
    pub augment: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// ViT patch size; defaults to 16 for vit16 and 32 for vit32.
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub mlp_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Comma-separated conv stage widths of the CNN baseline.
    #[arg(long)]
    pub cnn_widths: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// vit16, vit32 or cnn.
    #[arg(long)]
    pub model: Option<String>,
    /// Share of each class held out for validation, e.g. `1/6` or `0.2`.
    #[arg(long)]
    pub test_fraction: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub print_config: bool,
    #[command(flatten)]
    pub hyper: Hyper,
}

#[derive(Args)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated model kinds.
    #[arg(long)]
    pub model: Option<String>,
    /// Comma-separated validation fold counts, each in 1..=4.
    #[arg(long)]
    pub k: Option<String>,
    /// Upper bound on concurrently trained splits.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub print_config: bool,
    #[command(flatten)]
    pub hyper: Hyper,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory for report.json, predictions.csv and run_config.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct AttentionArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// `all` or comma-separated 1-based layer numbers.
    #[arg(long)]
    pub layers: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `bilinear` or `nearest`.
    #[arg(long)]
    pub upsample: Option<String>,
    /// `side-by-side`, `overlay` or `heatmap`.
    #[arg(long)]
    pub layout: Option<String>,
    /// Map opacity for the overlay layout.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// `png` or `ppm`.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Ingest(a) => commands::ingest(a),
        Command::Train(a) => commands::train(a),
        Command::Crossval(a) => commands::crossval(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
        Command::Attention(a) => commands::attention(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 2,
                CliError::Numeric(_) => 3,
            })
        }
    }
}
