mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jointie::error::ErrorCategory;

#[derive(Parser, Debug)]
#[command(name = "jointie", version, about = "Field extraction from long documents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a dataset file and report its statistics
    Ingest(IngestArgs),
    /// Train a model and write checkpoints, a metrics log and a manifest
    Train(TrainArgs),
    /// Run a checkpoint over a dataset and write prediction JSON
    Predict(PredictArgs),
    /// Score prediction JSON against a gold dataset
    Eval(EvalArgs),
    /// Time the joint model against the pairwise baseline
    Bench(BenchArgs),
    /// Write a seeded synthetic dataset
    GenSynthetic(GenArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    pub data: PathBuf,
    /// Also check that the annotations admit BIO targets
    #[arg(long)]
    pub validate: bool,
    /// Write the normalized dataset here
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML run configuration
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub output: PathBuf,
    /// joint | pairwise
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// sum | learnable_alpha
    #[arg(long)]
    pub loss_mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub window_length: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Gold dataset
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    /// Write the report as JSON here
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Count every gold span in the multi-span recall
    #[arg(long)]
    pub all_spans: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// TOML benchmark configuration
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Timing CSV
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub documents: Option<usize>,
    #[arg(long)]
    pub fields: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Skip the training-epoch rows
    #[arg(long)]
    pub no_train: bool,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub size: usize,
    #[arg(long, default_value_t = 4)]
    pub fields: usize,
    #[arg(long, default_value_t = 0.27)]
    pub multispan_rate: f64,
    #[arg(long, default_value_t = 450)]
    pub min_length: usize,
    #[arg(long, default_value_t = 750)]
    pub max_length: usize,
    #[arg(long, default_value_t = 0.1)]
    pub absent_rate: f64,
    #[arg(long, default_value = "doc")]
    pub id_prefix: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
        Command::GenSynthetic(a) => commands::gen_synthetic(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Runtime => 4,
            })
        }
    }
}
