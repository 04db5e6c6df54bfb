//! `gditd`: train, evaluate, benchmark and ablate Gaussian-descriptor OOD models.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gditd::gditd::LossTerms;
use gditd::model::Method;
use gditd::trainer::{BetaMode, TrainConfig};

/// Exit status for bad flags or configuration.
pub const EXIT_USAGE: u8 = 2;
/// Exit status when training or scoring diverges numerically.
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "gditd", version, about = "Gaussian-descriptor OOD detection for imbalanced tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cross-validate one method and save the first fold's model.
    Train(TrainArgs),
    /// Score a dataset with a saved model.
    Evaluate(EvaluateArgs),
    /// Sweep methods × MDSR values.
    Benchmark(BenchmarkArgs),
    /// Train the nine loss-term variants of the GDITD head.
    Ablate(AblateArgs),
    /// Write a synthetic Gaussian-blob dataset and its manifest.
    Blobs(BlobsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON sidecar naming the CSV, label column, OOD and minority classes.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    pub label_column: String,
    #[arg(long)]
    pub ood_class: Option<String>,
    #[arg(long)]
    pub minority_class: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 200)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Use β = 1/|B| instead of 1 − 1/|B|.
    #[arg(long)]
    pub beta_literal: bool,
    #[arg(long, default_value_t = 128)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

impl ConfigArgs {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            learning_rate: self.lr,
            gamma: self.gamma,
            beta_mode: if self.beta_literal {
                BetaMode::Literal
            } else {
                BetaMode::Effective
            },
            seed: self.seed,
            latent_dim: self.latent_dim,
            terms: LossTerms::ALL,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value = "gditd")]
    pub method: Method,
    /// Minority down-sampling ratio in (0, 1].
    #[arg(long)]
    pub mdsr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Model file written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Methods to compare; repeat or comma-separate.
    #[arg(long = "method", value_delimiter = ',', default_values = ["gditd", "softmax", "mahalanobis"])]
    pub methods: Vec<Method>,
    /// MDSR values; repeat or comma-separate.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.3, 0.25, 0.2, 0.15, 0.1])]
    pub mdsr: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub mdsr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BlobsArgs {
    /// Output CSV; the manifest is written next to it with a `.json` extension.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 300)]
    pub per_class: usize,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    #[arg(long, default_value_t = 8.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 12.0)]
    pub ood_offset: f64,
    /// ID class index (0-based) to designate as minority.
    #[arg(long)]
    pub minority: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn configure_threads() -> Result<(), commands::CliError> {
    let Ok(value) = std::env::var("GDITD_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| commands::CliError::Usage(format!("GDITD_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| commands::CliError::Usage(format!("cannot size the worker pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Train(args) => commands::train(&args),
        Command::Evaluate(args) => commands::evaluate(&args),
        Command::Benchmark(args) => commands::benchmark(&args),
        Command::Ablate(args) => commands::ablate(&args),
        Command::Blobs(args) => commands::blobs(&args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
