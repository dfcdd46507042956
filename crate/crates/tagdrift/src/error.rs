//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any tagdrift operation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("duplicate sample id: {0}")]
    DuplicateId(String),

    #[error("unknown corpus format: {0}")]
    UnknownFormat(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("corpus spans {weeks} weeks, not divisible by {weeks_per_bucket} weeks per bucket")]
    UnevenBuckets { weeks: u32, weeks_per_bucket: u32 },

    #[error("bucket {0} has an empty training tag set")]
    EmptyBucketVocab(usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("tag {tag:?} is {len} bytes, exceeds value width {width}")]
    TagTooLong {
        tag: String,
        len: usize,
        width: usize,
    },

    #[error("invalid tag encoding: {0}")]
    InvalidTagEncoding(String),

    #[error("missing embedding for sample {0}")]
    MissingEmbedding(String),

    #[error("non-finite value in vector for id {0}")]
    NonFiniteVector(String),

    #[error("corrupt file {path}: {message}")]
    CorruptFile { path: String, message: String },

    #[error("file {path} truncated: expected {expected} {unit}, found {actual}")]
    Truncated {
        path: String,
        expected: u64,
        actual: u64,
        unit: &'static str,
    },

    #[error("index generation {index} does not match store generation {store}")]
    StaleGeneration { index: u64, store: u64 },

    #[error("nlist {nlist} exceeds row count {rows}")]
    NlistTooLarge { nlist: usize, rows: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("missing data for bucket {0}")]
    MissingBucket(usize),

    #[error("{0}")]
    Config(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
