//! `gast`: train, infer, evaluate and inspect GAST-Net models.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "gast", version, about = "2D-to-3D pose lifting with graph attention and temporal convolutions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    Synth(SynthArgs),
    /// Train a model and write checkpoint, loss log and manifest.
    Train(TrainArgs),
    /// Predict 3D poses for every sequence of a dataset file.
    Infer(InferArgs),
    /// Score a checkpoint against 3D targets.
    Eval(EvalArgs),
    /// Write head-averaged global attention rows for one joint.
    ExportAttention(AttentionArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Print per-module and total trainable parameter counts.
    ParamCount(ParamCountArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub sequences: usize,
    #[arg(long, default_value_t = 200)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "h36m17")]
    pub skeleton: String,
}

/// Model hyperparameters; unset flags fall back to the config file, then defaults.
#[derive(Args, Clone, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub skeleton: Option<String>,
    #[arg(long)]
    pub rf: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub causal: bool,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub no_kinematic: bool,
    #[arg(long)]
    pub no_symmetric: bool,
    #[arg(long)]
    pub no_bk: bool,
    #[arg(long)]
    pub no_ck: bool,
    /// JSON file with optional "model" and "train" sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out dataset scored after every epoch.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_flip: bool,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Layer,
    Frame,
}

#[derive(Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "layer")]
    pub mode: ModeArg,
    #[arg(long)]
    pub no_flip: bool,
    /// Report frames per second for both inference modes.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub no_flip: bool,
}

#[derive(Args)]
pub struct AttentionArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub joint: usize,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct ParamCountArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Count from a checkpoint manifest instead of a configuration.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    commands::init_threads();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::ExportAttention(a) => commands::export_attention(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::ParamCount(a) => commands::param_count(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
