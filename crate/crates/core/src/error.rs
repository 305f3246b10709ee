// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("invalid probability row: {0}")]
    InvalidProbRow(String),

    #[error("invalid model config: {0}")]
    InvalidModelConfig(String),

    #[error("invalid smoother config: {0}")]
    InvalidSmootherConfig(String),

    #[error("bad magic: expected \"KVSM\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported weight file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("inconsistent weight header: {0}")]
    HeaderInconsistent(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("position mismatch: expected {expected}, got {got}")]
    PositionMismatch { expected: usize, got: usize },

    #[error("token id {token} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },

    #[error("sequence budget exceeded: {requested} positions > max_seq_len {max}")]
    BudgetExceeded { requested: usize, max: usize },

    #[error("cache inconsistent with model: {0}")]
    CacheMismatch(String),

    #[error("rank {k} out of range for queue capacity {capacity}")]
    RankOutOfRange { k: usize, capacity: usize },

    #[error("non-positive variance: {0}")]
    NonPositiveVariance(f64),

    #[error("attention history not retained for layer {layer}")]
    HistoryNotRetained { layer: usize },

    #[error("missing heads: expected {expected}, found {found}")]
    MissingHeads { expected: usize, found: usize },

    #[error("layer {layer} out of range ({num_layers} layers)")]
    LayerOutOfRange { layer: usize, num_layers: usize },

    #[error("empty group: {0}")]
    EmptyGroup(String),

    #[error("invalid lexicon: {0}")]
    InvalidLexicon(String),

    #[error("missing annotation for image {0}")]
    MissingAnnotation(String),

    #[error("probe references uncaptioned image {0}")]
    UncaptionedProbe(String),

    #[error("invalid probe: {0}")]
    InvalidProbe(String),

    #[error("unknown word {0:?} (not in vocabulary)")]
    UnknownWord(String),

    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("no work: {0}")]
    NoWork(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
