use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong inside the library.
///
/// Variants split into two families: I/O failures (`Io`, `Json` while
/// writing, `Csv`) and validation failures (everything else). The CLI maps
/// the first family to exit code 2 and the second to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("sentence {uid}: entity ({start}, {end}) out of bounds for {len} tokens")]
    EntityOutOfBounds {
        uid: String,
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("sentence {uid}: duplicate entity ({start}, {end}, {category})")]
    DuplicateEntity {
        uid: String,
        start: usize,
        end: usize,
        category: String,
    },

    #[error("unknown category {0:?}")]
    UnknownCategory(String),

    #[error("duplicate sentence uid {0:?}")]
    DuplicateUid(String),

    #[error("sentence {0:?} has no tokens")]
    EmptySentence(String),

    #[error("line {line}: dangling I-tag {tag:?}")]
    DanglingTag { line: usize, tag: String },

    #[error("line {line}: unknown tag {tag:?}")]
    UnknownTag { line: usize, tag: String },

    #[error("sentence {0:?} cannot be exported as IOB2: entities overlap")]
    OverlappingExport(String),

    #[error("unknown sentence uid {0:?}")]
    UnknownUid(String),

    #[error("sentence {uid}: embedding has {found} rows, sentence has {expected} tokens")]
    TokenCountMismatch {
        uid: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid embedding file: {0}")]
    InvalidEmbeddingFile(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("span ({start}, {end}) out of range for {len} tokens")]
    SpanOutOfRange {
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("boundary threshold {0} outside (0, 0.5]")]
    ThresholdOutOfRange(f64),

    #[error("decision threshold {0} outside (0, 1)")]
    TauOutOfRange(f64),

    #[error("{0}")]
    InvalidConfig(String),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("invalid model file: {0}")]
    InvalidModel(String),

    #[error("paired test needs at least 2 units, got {0}")]
    TooFewUnits(usize),

    #[error("prediction/gold uid mismatch: {0}")]
    UidMismatch(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the filesystem or a stream rather than by
    /// the content being processed.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Csv(e) => e.is_io_error(),
            Error::Json(e) => e.is_io(),
            _ => false,
        }
    }
}
