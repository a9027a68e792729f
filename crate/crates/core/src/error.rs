use std::path::PathBuf;

use thiserror::Error;

/// Every failure the toolkit can report. Loading never repairs data, so most
/// variants carry the location of the offending value.
#[derive(Debug, Error)]
pub enum Error {
    // ---- store ----
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("shape mismatch in {}: manifest declares {rows}x{dim} ({expected} bytes) but blob has {actual} bytes", path.display())]
    ShapeMismatch {
        path: PathBuf,
        rows: usize,
        dim: usize,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("row {row} has norm {norm} but the matrix is declared normalized")]
    NormViolation { row: usize, norm: f64 },
    #[error("matrix must have at least one row and one column (got {rows}x{dim})")]
    EmptyMatrix { rows: usize, dim: usize },
    #[error("malformed manifest {}: {reason}", path.display())]
    MalformedManifest { path: PathBuf, reason: String },
    #[error("CSV fixtures are limited to {limit} rows (got {rows})")]
    FixtureTooLarge { rows: usize, limit: usize },
    #[error("unknown outcome {value:?} on line {line}")]
    UnknownOutcome { line: u64, value: String },
    #[error("score {score} on line {line} is outside 1..=5")]
    ScoreOutOfRange { line: u64, score: i64 },
    #[error("malformed row on line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("invalid image set: {0}")]
    InvalidImageSet(String),

    // ---- token planning ----
    #[error("vocabulary has {entries} entries; {needed} are required")]
    VocabularyTooSmall { entries: usize, needed: usize },
    #[error("k = {k} exceeds the number of points ({rows})")]
    TooFewPoints { k: usize, rows: usize },
    #[error("all rows are identical; cannot form {k} clusters")]
    DegenerateInput { k: usize },
    #[error("input matrix must be row-normalized")]
    NotNormalized,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    // ---- identity sampling ----
    #[error("{available} samples remain after exclusion; at least {required} are required")]
    TooFewSamples { available: usize, required: usize },
    #[error("covariance is not positive definite for any jitter in {tried:?}")]
    FactorizationFailure { tried: Vec<f64> },
    #[error("sampling pool is empty")]
    EmptyPool,

    // ---- metrics ----
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("empty set")]
    EmptySet,

    // ---- validity filter ----
    #[error("image set lacks the {0} embedding space")]
    MissingEmbeddingSpace(&'static str),
    #[error("no subject count for image {0}")]
    MissingCount(String),
    #[error("override references unknown image {0}")]
    UnknownImageInOverride(String),
    #[error("image dimensions differ: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("image {width}x{height} is smaller than the {window}x{window} SSIM window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("image set has no pixel paths; duplicate detection needs them")]
    MissingPixels,
    #[error("unreadable image {}: {reason}", path.display())]
    UnreadableImage { path: PathBuf, reason: String },

    // ---- judgments ----
    #[error("no usable records")]
    NoRecords,
    #[error("comparison graph is disconnected: {components:?}")]
    DisconnectedGraph { components: Vec<Vec<String>> },
    #[error("strengths diverge: methods {dominated:?} never win against the rest")]
    UnboundedStrengths { dominated: Vec<String> },
    #[error("group {0} has no records")]
    EmptyGroup(String),

    // ---- reporting ----
    #[error("missing group {0}")]
    MissingGroup(String),
    #[error("cell {0} has no model values")]
    EmptyCell(String),
    #[error("usage: {0}")]
    Usage(String),

    #[error("I/O failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Process exit status for the CLI: 1 for bad input, 2 for failures of
    /// the machine itself (I/O on an existing path).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            _ => 1,
        }
    }
}
