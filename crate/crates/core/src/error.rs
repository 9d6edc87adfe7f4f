use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("unsupported audio layout in {path}: {channels} channels (mono required)")]
    UnsupportedLayout { path: PathBuf, channels: u16 },
    #[error("utterance too short: {n_samples} samples, need at least {required}")]
    TooShort { n_samples: usize, required: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("noise has {noise_len} samples but signal needs {signal_len}")]
    Length { noise_len: usize, signal_len: usize },
    #[error("frame correspondence broken: {0}")]
    FrameCorrespondence(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("empty selection at w = {w}: per-constraint subset sizes {subset_sizes:?}")]
    EmptySelection { w: f64, subset_sizes: Vec<usize> },
    #[error("selection inconsistent with features: {0}")]
    Consistency(String),
    #[error("insufficient data: {have} frames for {need} clusters/components")]
    InsufficientData { have: usize, need: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degenerate trials: {n_target} target and {n_nontarget} non-target")]
    DegenerateTrials { n_target: usize, n_nontarget: usize },
    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv error in {path}: {reason}")]
    Csv { path: PathBuf, reason: String },
    #[error("stage {stage} failed on {item}: {source}")]
    Stage {
        stage: &'static str,
        item: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str, item: impl Into<String>) -> Self {
        Error::Stage {
            stage,
            item: item.into(),
            source: Box::new(self),
        }
    }
}
