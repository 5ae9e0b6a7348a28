//! `gae`: data generation, training, evaluation and analogy rendering for
//! gated autoencoders.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 numerical, 5 incompatible inputs.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gae_core::GaeError;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError { code: 3, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        CliError { code: 4, message: message.into() }
    }

    pub fn incompatible(message: impl Into<String>) -> Self {
        CliError { code: 5, message: message.into() }
    }
}

impl From<GaeError> for CliError {
    fn from(e: GaeError) -> Self {
        let message = e.to_string();
        match e {
            GaeError::Config(_) | GaeError::InsufficientPopulation(_) | GaeError::Empty(_) => {
                CliError::usage(message)
            }
            GaeError::Io(_) | GaeError::Format(_) | GaeError::Truncated { .. } => {
                CliError::io(message)
            }
            GaeError::NonFinite(_) | GaeError::Diverged { .. } | GaeError::Degenerate(_) => {
                CliError::numerical(message)
            }
            GaeError::Shape { .. } => CliError::incompatible(message),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "gae", version, about = "Gated autoencoders with content-invariance regularization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a rotated-pair dataset file from IDX images or synthetic shapes.
    GenData(GenDataArgs),
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Compute MSRE, MSCRE, DBI and rotation error for a checkpoint.
    Eval(EvalArgs),
    /// Render an analogy grid as a PNG.
    Analogy(AnalogyArgs),
    /// Print checkpoint metadata.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// `synthetic` or `mnist`.
    #[arg(long, default_value = "synthetic")]
    pub source: String,
    /// IDX image file (required for `--source mnist`).
    #[arg(long)]
    pub idx: Option<PathBuf>,
    /// Angle set: mnistr20, mnistr20_10 or mnistr1.
    #[arg(long, default_value = "mnistr20")]
    pub tset: String,
    /// Number of pairs.
    #[arg(long)]
    pub n: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub pairs_per_image: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the synthetic base images; defaults to `--seed`.
    #[arg(long)]
    pub image_seed: Option<u64>,
    /// Keep pixels outside the inscribed disk.
    #[arg(long)]
    pub no_mask: bool,
    /// Skip contrast normalization.
    #[arg(long)]
    pub raw: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training pairs; overrides `data.train`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Baseline model: disables the regularizer and sets lambda_max to 0.
    #[arg(long)]
    pub no_cir: bool,
    /// Continue from a checkpoint; its stored configuration is used.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many epochs in total, as if interrupted.
    #[arg(long, hide = true)]
    pub stop_after: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluation (test) pairs.
    #[arg(long)]
    pub data: PathBuf,
    /// Training split of the evaluation data, used by the KNN classifier.
    #[arg(long)]
    pub knn_data: PathBuf,
    /// Name of the data the model was trained on.
    #[arg(long)]
    pub gae_data: Option<String>,
    /// Name of the evaluation data.
    #[arg(long)]
    pub eval_data: Option<String>,
    #[arg(long, default_value_t = gae_core::eval::DEFAULT_MSCRE_K)]
    pub mscre_k: usize,
    #[arg(long, default_value_t = gae_core::eval::DEFAULT_KNN_K)]
    pub knn_k: usize,
    #[arg(long, default_value_t = gae_core::eval::EVAL_SEED)]
    pub seed: u64,
    /// Append the CSV row to this file, writing a header if it is new.
    #[arg(long)]
    pub results: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnalogyArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated pair indices whose mappings are applied.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub sources: Vec<usize>,
    /// Comma-separated pair indices whose x images are transformed.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub queries: Vec<usize>,
    /// Use (x, x) as the source pair, i.e. the identity transformation.
    #[arg(long)]
    pub identity: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("GAE_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::usage(format!("GAE_THREADS must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::usage(format!("cannot configure {threads} threads: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::GenData(args) => commands::gen_data(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Analogy(args) => commands::analogy(args),
        Command::Inspect(args) => commands::inspect(args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
