//! Command-line front end: synthesis, feature extraction, training,
//! evaluation, augmentation demos and model inspection. Every command writes
//! into a staging directory and moves its files into `--out` only on success.

mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use setrans::data::Split;
use setrans::Task;

pub use commands::{AugmentOutcome, InspectOutcome, Outcome, SynthOutcome, TrainOutcome};
pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "setrans", version, about = "SE + Transformer environmental sound recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (WAV files plus manifest.jsonl).
    Synth(SynthArgs),
    /// Compute log-mel features for the clips of a manifest.
    Extract(ExtractArgs),
    /// Train a model and write model.setc and log.csv.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write report.csv plus task curves.
    Eval(EvalArgs),
    /// Render an augmentation of a feature matrix as PGM and CSV.
    AugmentDemo(AugmentArgs),
    /// Export attention maps, SE gate weights and the top-gated feature map.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    pub fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse().map_err(|e: setrans::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = parse_task)]
    pub task: Task,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = setrans::DEFAULT_SEED)]
    pub seed: u64,
    /// Clip length in seconds (default 10).
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long, value_parser = parse_task)]
    pub task: Task,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_task)]
    pub task: Task,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with training and model settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = setrans::DEFAULT_SEED)]
    pub seed: u64,
    /// none, specaugment, mixup or fmix.
    #[arg(long)]
    pub augment: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub ffn: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Manifest clips to train on.
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_parser = parse_task)]
    pub task: Task,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, value_enum, default_value = "f32")]
    pub mode: Mode,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Feature matrix: a text dump written by `extract`, or a CSV.
    #[arg(long)]
    pub features: PathBuf,
    /// Second matrix for mixup and FMix; defaults to the first one reversed in time.
    #[arg(long)]
    pub partner: Option<PathBuf>,
    /// none, specaugment, mixup or fmix.
    #[arg(long)]
    pub augment: String,
    #[arg(long, default_value_t = setrans::DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A WAV clip or a feature matrix (text dump or CSV).
    #[arg(long)]
    pub sample: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "f64")]
    pub mode: Mode,
    /// Context window to inspect for anomaly-detection models.
    #[arg(long, default_value_t = 0)]
    pub window: usize,
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a).map(Outcome::Synth),
        Command::Extract(a) => commands::extract(&a).map(Outcome::Extract),
        Command::Train(a) => commands::train(&a).map(Outcome::Train),
        Command::Eval(a) => commands::eval(&a).map(Outcome::Eval),
        Command::AugmentDemo(a) => commands::augment_demo(&a).map(Outcome::Augment),
        Command::Inspect(a) => commands::inspect(&a).map(Outcome::Inspect),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> anyhow::Result<Outcome>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run(Cli::try_parse_from(args)?)
}
