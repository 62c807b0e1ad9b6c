use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed JSON at line {line}: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing {field} at line {line}")]
    MissingField { field: &'static str, line: usize },

    #[error("invalid label path {label:?} at line {line}")]
    InvalidLabel { label: String, line: usize },

    #[error("no tokens")]
    NoTokens,

    #[error("need at least 2 classes, found {0}")]
    TooFewClasses(usize),

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("pool {pool} has {size} examples, fewer than the {parts} requested parts")]
    PoolTooSmall {
        pool: &'static str,
        size: usize,
        parts: usize,
    },

    #[error("invalid ratios for {pool}: {message}")]
    InvalidRatios { pool: &'static str, message: String },

    #[error("lexicon required")]
    LexiconRequired,

    #[error("back-translation command failed with status {status}: {stderr}")]
    ExternalCommand { status: String, stderr: String },

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    IdOutOfRange { id: u32, vocab: usize },

    #[error("stale trace: parameters changed since the forward pass")]
    StaleTrace,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("temperature must be positive, got {0}")]
    Temperature(f64),

    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("divergence at step {step}: {breakdown}")]
    Divergence { step: u64, breakdown: String },

    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u64),

    #[error("corrupted checkpoint: {0}")]
    Checkpoint(String),

    #[error("vocabulary mismatch: checkpoint was trained with vocabulary {expected}, found {found}")]
    VocabMismatch { expected: String, found: String },

    #[error("{0}")]
    Invalid(String),

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

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
