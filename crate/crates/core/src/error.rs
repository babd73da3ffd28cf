//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Dataset file could not be found or opened.
    #[error("missing dataset file {path}: {source}")]
    MissingFile {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// CSV header does not match the declared schema.
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),

    /// Ingestion dropped every row of the file.
    #[error("all {0} rows were dropped during ingestion")]
    AllRowsDropped(usize),

    /// Encoding met a categorical value that is not part of the schema.
    #[error("unknown category {value:?} for feature {feature:?}")]
    UnknownCategory { feature: String, value: String },

    /// A statistic required by the caller is not available.
    #[error("statistic {statistic} unavailable for feature {feature:?}")]
    UnavailableStatistic { feature: String, statistic: String },

    /// Per-class statistics were requested but a class has no rows.
    #[error("class {class} ({name:?}) has no rows in the pool")]
    MissingClass { class: usize, name: String },

    /// A stats or query file references features outside the schema.
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    /// A categorical pool holds no values to sample from.
    #[error("empty categorical pool for feature {0:?}")]
    EmptyPool(String),

    /// Initial-sample mixing cannot satisfy a class quota.
    #[error("class {class} needs {needed} initial samples but only {available} exist")]
    ClassShortfall {
        class: usize,
        needed: usize,
        available: usize,
    },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    /// The victim rejected a query batch.
    #[error("rejected query: {0}")]
    RejectedQuery(String),

    /// Talking to a remote victim failed after retries.
    #[error("transport error: {0}")]
    Transport(String),

    /// The prediction service could not start.
    #[error("service startup failed: {0}")]
    Startup(String),

    /// A results or config file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A serialized artifact is malformed or has the wrong version.
    #[error("bad file format: {0}")]
    Format(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
