use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mask has no foreground pixels")]
    EmptyMask,

    #[error("rle decode: runs sum to {got}, expected {expected}")]
    RleLength { got: u64, expected: u64 },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss term `{0}`")]
    NonFiniteLoss(&'static str),

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("incomplete dataset at {}: annotations.json missing", .0.display())]
    IncompleteDataset(PathBuf),

    #[error("unsupported {what} version {found} (expected {expected})")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("checkpoint does not match model configuration:\n{0}")]
    CheckpointMismatch(String),

    #[error("config: {0}")]
    Config(String),

    #[error("empty dataset")]
    EmptyDataset,
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Short stable identifier, used for machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::EmptyMask => "empty_mask",
            Error::RleLength { .. } => "rle_length",
            Error::NonFiniteGradient(_) => "non_finite_gradient",
            Error::NonFiniteLoss(_) => "non_finite_loss",
            Error::Generation(_) => "generation",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::IncompleteDataset(_) => "incomplete_dataset",
            Error::Version { .. } => "version",
            Error::CheckpointMismatch(_) => "checkpoint_mismatch",
            Error::Config(_) => "config",
            Error::EmptyDataset => "empty_dataset",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
