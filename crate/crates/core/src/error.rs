use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand dimensions do not line up. `operand` names the argument that disagreed.
    #[error("shape mismatch in {op}: operand `{operand}` expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        operand: &'static str,
        expected: String,
        actual: String,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("word `{0}` is not in the vocabulary")]
    OutOfVocabulary(String),

    #[error("word `{0}` has an all-zero vector")]
    ZeroVector(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("training data contains only one class ({0}); need at least one alert and one normal example")]
    SingleClass(&'static str),

    #[error("unknown preset `{name}`; valid presets: {}", valid.join(", "))]
    UnknownPreset { name: String, valid: Vec<String> },

    #[error("incomplete model grid; missing variants: {}", .0.join(", "))]
    IncompleteGrid(Vec<String>),

    #[error("vocabulary hash mismatch: model expects {expected}, embedding has {actual}")]
    VocabularyMismatch { expected: String, actual: String },

    #[error("model file: {0}")]
    Format(String),

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        operand: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            op,
            operand,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
