//! Error types shared across the crate.
//!
//! Every fallible operation returns [`LabError`]; the CLI maps each variant
//! to a stable machine-readable class tag emitted as JSON on stderr.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    /// Tensor shapes do not line up (e.g. matmul inner extents disagree).
    #[error("dimension error: {0}")]
    Dimension(String),

    /// NaN/Inf entered a numeric kernel that requires finite inputs.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The caller violated an API precondition.
    #[error("usage error: {0}")]
    Usage(String),

    /// Bad external input (out-of-range token ids, malformed files, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Invalid configuration values.
    #[error("config error: {0}")]
    Config(String),

    /// A rendered sequence exceeds the configured maximum length.
    #[error("length error: {0}")]
    Length(String),

    /// A loss was requested over zero unmasked positions.
    #[error("empty loss: {0}")]
    EmptyLoss(String),

    /// Degenerate numeric input, e.g. a zero-norm vector fed to cosine similarity.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Head selection could not satisfy the request (e.g. too few weak heads).
    #[error("selection error: {0}")]
    Selection(String),

    /// Training aborted because the loss left the finite range.
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    /// Checkpoint manifest/blob mismatch or version problems.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Serialization/deserialization failure.
    #[error("format error: {0}")]
    Format(String),
}

impl LabError {
    /// Stable class tag used by the CLI's machine-readable error JSON.
    pub fn class(&self) -> &'static str {
        match self {
            LabError::Dimension(_) => "dimension",
            LabError::Numeric(_) => "numeric",
            LabError::Usage(_) => "usage",
            LabError::Input(_) => "input",
            LabError::Config(_) => "config",
            LabError::Length(_) => "length",
            LabError::EmptyLoss(_) => "empty-loss",
            LabError::DegenerateInput(_) => "degenerate-input",
            LabError::Selection(_) => "selection",
            LabError::NonFiniteLoss { .. } => "non-finite-loss",
            LabError::Checkpoint(_) => "checkpoint",
            LabError::Io { .. } => "io",
            LabError::Format(_) => "format",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
