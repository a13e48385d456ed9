//! Command-line harness: experiment orchestration, run-directory
//! persistence, and report emission.
//!
//! Every command exits nonzero on error with a machine-readable JSON record
//! on stderr; no command mutates its input files. The environment variable
//! `MUDAF_LAB_SEED` overrides any `--seed` flag.

pub mod commands;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::{LabError, Result};

pub const SEED_ENV_VAR: &str = "MUDAF_LAB_SEED";

#[derive(Parser, Debug)]
#[command(
    name = "mudaf-lab",
    version,
    about = "Retrieval-head analysis and attention-focusing training on a toy decoder transformer"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic multi-document QA dataset (JSON lines).
    GenData(GenDataArgs),
    /// Score every attention head's retrieval ability over a dataset.
    ScoreHeads(ScoreHeadsArgs),
    /// Train a model: vanilla SFT or the joint contrastive objective.
    Train(TrainArgs),
    /// Compare QA accuracy under different head-masking strategies.
    MaskEval(MaskEvalArgs),
    /// Emit CSV/SVG report artifacts from a completed run directory.
    Report(ReportArgs),
}

#[derive(clap::Args, Debug)]
pub struct GenDataArgs {
    /// Corpus configuration JSON; defaults to 10 passages, 1 golden.
    #[arg(long)]
    pub corpus_config: Option<PathBuf>,
    /// Number of samples to generate.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite an existing output file.
    #[arg(long)]
    pub force: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum AttributionArg {
    /// Attribute attention from the final input token (answer cue).
    PromptLast,
    /// Attribute attention from the final question token.
    QuestionLast,
}

impl From<AttributionArg> for crate::analysis::AttributionToken {
    fn from(a: AttributionArg) -> Self {
        match a {
            AttributionArg::PromptLast => crate::analysis::AttributionToken::PromptLast,
            AttributionArg::QuestionLast => crate::analysis::AttributionToken::QuestionLast,
        }
    }
}

#[derive(clap::Args, Debug)]
pub struct ScoreHeadsArgs {
    /// Checkpoint directory (manifest.json + weights.bin).
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Attended-passage threshold (strict) for the F1 score.
    #[arg(long, default_value_t = crate::analysis::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value_t = AttributionArg::PromptLast)]
    pub attribution: AttributionArg,
    /// Output prefix: writes <out>.csv and <out>.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of heads reported as retrieval heads in the summary.
    #[arg(long, default_value_t = crate::analysis::DEFAULT_TOP_FRACTION)]
    pub top_fraction: f64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum TrainMode {
    /// CLM loss only, passage order reshuffled each step.
    Vanilla,
    /// Joint CLM + contrastive loss on selected strong heads.
    Mudaf,
    /// Joint objective applied to weak heads (F1 < 0.1).
    MudafWeak,
}

impl TrainMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Vanilla => "vanilla",
            TrainMode::Mudaf => "mudaf",
            TrainMode::MudafWeak => "mudaf-weak",
        }
    }
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub run_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = TrainMode::Mudaf)]
    pub mode: TrainMode,
    #[arg(long, required_unless_present = "from_manifest")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub corpus_config: Option<PathBuf>,
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    /// Target heads: "auto" (select from --scores) or a head-set JSON file.
    #[arg(long)]
    pub heads: Option<String>,
    /// Head score table (JSON) used by auto selection.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub selection_config: Option<PathBuf>,
    /// Master seed; MUDAF_LAB_SEED takes precedence.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Start from these weights instead of a fresh seeded init.
    #[arg(long)]
    pub init_checkpoint: Option<PathBuf>,
    /// Replay a recorded run manifest (reproduces artifacts byte-for-byte).
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
    /// Allow writing into an existing, non-empty run directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    /// Mask the top-k heads of --scores.
    Top,
    /// Mask k uniformly random heads, averaged over --repeats seeds.
    Random,
    /// Mask the top-k heads of --niah-scores.
    NiahProxy,
    /// Every strategy whose inputs were provided.
    All,
}

#[derive(clap::Args, Debug)]
pub struct MaskEvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = StrategyArg::All)]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub niah_scores: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report JSON output path; a CSV sibling is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Score table before training; default <run-dir>/scores/before.json.
    #[arg(long)]
    pub before: Option<PathBuf>,
    /// Score table after training; default <run-dir>/scores/after.json.
    #[arg(long)]
    pub after: Option<PathBuf>,
    /// Dataset providing the heatmap sample.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub sample_index: usize,
    /// Checkpoint for the heatmap; default <run-dir>/checkpoints/final.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Head set defining heatmap rows; default <run-dir>/config/heads.json.
    #[arg(long)]
    pub heads: Option<PathBuf>,
}

/// Applies the `MUDAF_LAB_SEED` override, then the flag, then the default.
pub fn resolve_seed(flag: Option<u64>, default: u64) -> Result<u64> {
    match std::env::var(SEED_ENV_VAR) {
        Ok(text) => text.trim().parse::<u64>().map_err(|_| {
            LabError::Config(format!("{SEED_ENV_VAR} must be an unsigned integer, got '{text}'"))
        }),
        Err(_) => Ok(flag.unwrap_or(default)),
    }
}

/// Machine-readable error record emitted on stderr.
pub fn error_json(err: &LabError) -> String {
    serde_json::json!({ "error": err.class(), "message": err.to_string() }).to_string()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(args) => commands::gen_data(&args),
        Command::ScoreHeads(args) => commands::score_heads(&args),
        Command::Train(args) => commands::train(&args).map(|_| ()),
        Command::MaskEval(args) => commands::mask_eval(&args),
        Command::Report(args) => commands::report(&args),
    }
}
