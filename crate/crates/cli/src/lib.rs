//! `ssmkit` command-line driver: synthetic cohorts, training, inference, evaluation,
//! uncertainty reports and downstream shape analysis, each writing into its own run
//! directory.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;
pub mod error;
pub mod output;
pub mod svg;

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "ssmkit", version, about = "Probabilistic correspondence shape models from surface meshes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate a synthetic cohort with meshes, manifest and factor table.
    Synth(SynthArgs),
    /// Train a model on the training split of a manifest.
    Train(TrainArgs),
    /// Predict correspondences for every mesh of a manifest.
    Infer(InferArgs),
    /// Per-subject surface metrics and compactness/generalization/specificity curves.
    Eval(EvalArgs),
    /// Sampling-based aleatoric uncertainty and its correlation with error.
    Uncertainty(UncertaintyArgs),
    /// Shape statistics on correspondences.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyzeCommand {
    /// Walk a PCA mode in data or latent space.
    Modes(ModesArgs),
    /// Pointwise Hotelling T² group differences with permutation p-values and FDR.
    Groupdiff(GroupDiffArgs),
    /// LDA shape scores normalised so the group means map to -1 and +1.
    Lda(LdaArgs),
    /// Cross-validated MLP classification from correspondences.
    Classify(ClassifyArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Cohort spec JSON; defaults are used for missing fields or when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the spec.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Two-group cohort: number of controls (requires --pathology and a bumped family).
    #[arg(long, requires = "pathology")]
    pub controls: Option<usize>,
    #[arg(long, requires = "controls")]
    pub pathology: Option<usize>,
    /// Shuffle the vertex order of every mesh so connectivity carries no correspondence.
    #[arg(long)]
    pub shuffle_vertices: bool,
    #[arg(long, value_enum, default_value_t = Format::Ply)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Ply,
    Obj,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON with optional `model` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub max_modes: usize,
    /// Shapes sampled per mode count for specificity.
    #[arg(long, default_value_t = 100)]
    pub specificity_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct UncertaintyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Posterior samples per subject.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Number of subjects flagged as likely outliers.
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Where correspondences come from: a model's predictions or `.particles` files.
#[derive(Debug, Args, Serialize)]
pub struct Source {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, conflicts_with = "particles", required_unless_present = "particles")]
    pub model: Option<PathBuf>,
    /// Directory of `<subject_id>.particles` files, for example the output of `infer`.
    #[arg(long)]
    pub particles: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Data,
    Latent,
}

#[derive(Debug, Args, Serialize)]
pub struct ModesArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: Source,
    /// 1-based mode index.
    #[arg(long, default_value_t = 1)]
    pub mode: usize,
    /// Steps in standard deviations.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-2,-1,0,1,2")]
    pub steps: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Space::Data)]
    pub space: Space,
}

#[derive(Debug, Args, Serialize)]
pub struct GroupDiffArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: Source,
    #[arg(long, default_value_t = 1000)]
    pub permutations: usize,
    /// False discovery rate.
    #[arg(long, default_value_t = 0.05)]
    pub q: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct LdaArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: Source,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ClassifyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: Source,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 100)]
    pub hidden: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Runs one command to completion.
pub fn run(command: &Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => commands::synth::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Infer(a) => commands::infer::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Uncertainty(a) => commands::uncertainty::run(a),
        Command::Analyze(AnalyzeCommand::Modes(a)) => commands::analyze::modes(a),
        Command::Analyze(AnalyzeCommand::Groupdiff(a)) => commands::analyze::groupdiff(a),
        Command::Analyze(AnalyzeCommand::Lda(a)) => commands::analyze::lda(a),
        Command::Analyze(AnalyzeCommand::Classify(a)) => commands::analyze::classify(a),
    }
}
