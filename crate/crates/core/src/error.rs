use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    DimensionMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("input too short: {len} samples, need at least {needed}")]
    InputTooShort { len: usize, needed: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error(
        "T60 of {t60} s is unachievable for this room (Sabine absorption {alpha:.4} > 1)"
    )]
    UnachievableT60 { t60: f64, alpha: f64 },

    #[error("image-source order too large: {images} images exceeds the guard of {limit}")]
    TooManyImages { images: u64, limit: u64 },

    #[error("unsupported audio format in {path}: {detail}")]
    AudioFormat { path: PathBuf, detail: String },

    #[error("reference signal is all zeros")]
    ZeroReference,

    #[error("{regions} regions exceed the permutation guard of {limit}; use the assignment solver path instead")]
    TooManyPermutations { regions: usize, limit: usize },

    #[error("missing {0}")]
    Missing(String),

    #[error("insufficient utterances for split {split}: need {needed}, have {available} (short by {})", needed - available)]
    InsufficientUtterances {
        split: String,
        needed: usize,
        available: usize,
    },

    #[error("non-finite loss at step {step}; last good checkpoint: {checkpoint:?}")]
    NonFiniteLoss {
        step: usize,
        checkpoint: Option<PathBuf>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
