use std::path::PathBuf;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: expected {expected:?}, found {found:?}")]
    LayerShape {
        layer: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("tape has no scalar loss attached")]
    NoLoss,

    #[error("not a model file (bad magic bytes)")]
    NotModelFile,

    #[error("unsupported model file version {0}")]
    Version(u16),

    #[error("model file checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("truncated model file: {0}")]
    Truncated(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid labels: {0}")]
    Labels(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("image format error at byte {offset}: {message}")]
    ImageFormat { offset: usize, message: String },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("roc needs both positive and negative samples (positives {positives}, negatives {negatives})")]
    SingleClass { positives: usize, negatives: usize },

    #[error(
        "boundary generation failed after {iterations} iterations (best score {best_score:.4})"
    )]
    GenerationFailed { iterations: usize, best_score: f64 },

    #[error("generation retry budget exhausted: {produced} of {requested} samples produced")]
    RetryBudget { produced: usize, requested: usize },

    #[error("report mismatch: {0}")]
    ReportMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
