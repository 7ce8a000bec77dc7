use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("ontology validation failed: {0}")]
    Validation(String),

    #[error("term lookup failed: {0}")]
    Lookup(String),

    #[error("namespace mismatch: {term} belongs to {found}, expected {expected}")]
    DomainMismatch {
        term: String,
        found: String,
        expected: String,
    },

    #[error("ingestion failed: {0}")]
    Ingestion(String),

    #[error("encoding failed: character {character:?} at position {position} is not in the alphabet")]
    Encoding { position: usize, character: char },

    #[error("label index {index} out of range for {size} labels")]
    LabelRange { index: usize, size: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset construction failed: {0}")]
    Dataset(String),

    #[error("non-finite loss at batch {batch} of epoch {epoch}: {value}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },

    #[error("missing gradient for parameter {0}")]
    MissingGradient(String),

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("incompatible file: {0}")]
    Incompatible(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Numerical failures are distinguished from bad input by the CLI exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. })
    }
}
