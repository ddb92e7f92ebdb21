use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch, {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("{op}: axis {axis} out of range for rank {rank}")]
    Axis { op: &'static str, axis: usize, rank: usize },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("variable does not belong to this tape")]
    NotOnTape,

    #[error("backward already ran on this tape; record a new forward pass")]
    TapeConsumed,

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("batch normalization used in infer mode before any running-stat update")]
    UninitializedStats,

    #[error("unknown model {0:?} (expected one of carspeednet, dnn_star, lstm, wavenet, bilstm, resnet)")]
    UnknownModel(String),

    #[error("window size {expected} expected, got {found}")]
    WindowSize { expected: usize, found: usize },

    #[error("model has no normalization statistics")]
    MissingNormStats,

    #[error("standardization: axis {axis} has zero standard deviation")]
    ZeroStd { axis: usize },

    #[error("{path}:{line}: malformed row: {msg}")]
    MalformedRow { path: PathBuf, line: u64, msg: String },

    #[error("{path}:{line}: timestamp {t} does not increase")]
    NonMonotonic { path: PathBuf, line: u64, t: f64 },

    #[error("{0}: no data rows")]
    EmptyFile(PathBuf),

    #[error("session {session}: no GPS point reaches GDOP <= {threshold}")]
    GdopNeverSettled { session: String, threshold: f64 },

    #[error("need at least {needed} sessions, have {have}")]
    TooFewSessions { needed: usize, have: usize },

    #[error("non-finite gradient in {param} at step {step}")]
    NonFiniteGradient { param: String, step: u64 },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: u64 },

    #[error("weights file: bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("weights file: unsupported version {0}")]
    UnsupportedVersion(u8),

    #[error("weights file: truncated ({0})")]
    Truncated(&'static str),

    #[error("weights file: payload checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("weights file: bad header: {0}")]
    Header(String),

    #[error("window size {window}: {source}")]
    Sweep { window: usize, source: Box<Error> },

    #[error("model {model}: {source}")]
    Compare { model: String, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
