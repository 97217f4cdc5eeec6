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

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("element {element} references node {node}, outside 1..={node_count}")]
    IndexOutOfRange {
        element: usize,
        node: i64,
        node_count: usize,
    },

    #[error("degenerate triangles (element ids): {0:?}")]
    DegenerateTriangles(Vec<usize>),

    #[error("bad {what} magic or version: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("node count mismatch: file has {found}, mesh has {expected}")]
    NodeCountMismatch { expected: usize, found: usize },

    #[error("times not strictly increasing at index {0}")]
    NonIncreasingTimes(usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("length mismatch: expected {expected}, got {found} ({what})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("gradients requested without a recorded forward pass")]
    NoRecordedForward,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
