use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}:{line}: column `{column}`: {message}")]
    Parse {
        file: PathBuf,
        line: u64,
        column: String,
        message: String,
    },

    #[error("{file}:{line}: edge {edge} references missing node {node}")]
    DanglingNode {
        file: PathBuf,
        line: u64,
        edge: String,
        node: String,
    },

    #[error("edge {edge} does not match the endpoint types of relation `{relation}`")]
    TypeMismatch { relation: String, edge: String },

    #[error("duplicate edge {edge} in relation `{relation}`")]
    DuplicateEdge { relation: String, edge: String },

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics (divergence, NaN) rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
