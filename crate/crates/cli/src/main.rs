//! `shiftlab` command-line interface.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::TrainArgs;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_FORMAT: u8 = 3;
pub const EXIT_COLLAPSE: u8 = 4;

/// Bad flags or config values detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "shiftlab",
    version,
    about = "Domain-gap measurement and unsupervised adaptation on a seeded VQA-style benchmark"
)]
pub struct Cli {
    /// JSON config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice of the run.
    #[arg(long, global = true, env = "SHIFTLAB_SEED")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Dataset gap measurement.
    #[command(subcommand)]
    Gap(GapCommand),
    /// Synthetic shift construction.
    #[command(subcommand)]
    Shift(ShiftCommand),
    /// Benchmark generation.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Model training, adaptation and evaluation.
    #[command(subcommand)]
    Vqa(VqaCommand),
    /// Experiment reports.
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Subcommand)]
pub enum GapCommand {
    /// Pairwise MMD² between datasets, per representation.
    Measure(GapMeasureArgs),
}

#[derive(Args)]
pub struct GapMeasureArgs {
    /// Feature files (FMAT); the representation is the file's modality.
    #[arg(long, num_args = 1..)]
    pub features: Vec<PathBuf>,
    /// Question files (line-JSON with a "q" field); measured on syntax features.
    #[arg(long, num_args = 1..)]
    pub questions: Vec<PathBuf>,
    /// Dataset bundles; measured on image features and on syntax features.
    #[arg(long, num_args = 1..)]
    pub bundles: Vec<PathBuf>,
    /// Rows sampled per dataset at most.
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Subcommand)]
pub enum ShiftCommand {
    /// Shift a bundle's image features and/or questions.
    Make(ShiftMakeArgs),
    /// Keep an original image's chroma under a stylized image's luminance (PPM).
    Luma(ShiftLumaArgs),
}

#[derive(Args)]
pub struct ShiftMakeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Image shift strength in [0, 1].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Seed of the synthetic style statistics.
    #[arg(long)]
    pub style_seed: Option<u64>,
    /// Adjacent-swap probability of the question perturbation.
    #[arg(long)]
    pub perturb_prob: Option<f64>,
}

#[derive(Args)]
pub struct ShiftLumaArgs {
    #[arg(long)]
    pub stylized: PathBuf,
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand)]
pub enum BenchCommand {
    /// Write the four benchmark splits as bundles.
    Gen(BenchGenArgs),
}

#[derive(Args, Clone, Default)]
pub struct BenchSpecArgs {
    /// Image shift strength of the target domain.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_eval: Option<usize>,
    #[arg(long)]
    pub image_dim: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
}

#[derive(Args)]
pub struct BenchGenArgs {
    #[command(flatten)]
    pub spec: BenchSpecArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Subcommand)]
pub enum VqaCommand {
    /// Source-only training.
    Train(VqaTrainArgs),
    /// Training under one of the adaptation methods.
    Adapt(VqaAdaptArgs),
    /// Accuracy of a saved model on a labeled bundle.
    Eval(VqaEvalArgs),
}

#[derive(Args)]
pub struct VqaTrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Labeled bundle to report accuracy on after training.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    #[arg(long)]
    pub model_out: PathBuf,
    #[command(flatten)]
    pub train_args: TrainArgs,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Method {
    Direct,
    Dann1,
    Mm,
    Dann2,
}

#[derive(Args)]
pub struct VqaAdaptArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long)]
    pub source: PathBuf,
    /// Target bundle; any answers it carries are never read.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub model_out: PathBuf,
    #[command(flatten)]
    pub train_args: TrainArgs,
}

#[derive(Args)]
pub struct VqaEvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Result JSON; also printed to stdout.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand)]
pub enum ReportCommand {
    /// Every selected regime on one source/target pair.
    Matrix(ReportMatrixArgs),
}

#[derive(Args)]
pub struct ReportMatrixArgs {
    /// Directory written by `bench gen`; otherwise a benchmark is generated.
    #[arg(long)]
    pub bench_dir: Option<PathBuf>,
    #[command(flatten)]
    pub spec: BenchSpecArgs,
    /// Comma-separated subset of direct,dann1,mm,dann2,sup10_scratch,sup10_finetune,full.
    #[arg(long)]
    pub regimes: Option<String>,
    /// Regimes trained concurrently.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub supervised_fraction: Option<f64>,
    #[command(flatten)]
    pub train_args: TrainArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<shiftlab::Error>() {
            return match e {
                shiftlab::Error::Collapsed { .. } => EXIT_COLLAPSE,
                shiftlab::Error::InvalidParameter(_) => EXIT_USAGE,
                _ => EXIT_FORMAT,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return EXIT_FORMAT;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
