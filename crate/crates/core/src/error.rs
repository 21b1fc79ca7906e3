use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed JSON at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid sample {id}: {}", violations.join("; "))]
    InvalidSample { id: String, violations: Vec<String> },

    #[error("acronym {acronym:?}: duplicate expansion {expansion:?}")]
    DuplicateExpansion { acronym: String, expansion: String },

    #[error("acronym {acronym:?}: expansion list is empty")]
    EmptyExpansionList { acronym: String },

    #[error("acronym {0:?} is not in the dictionary")]
    MissingAcronym(String),

    #[error("expansion is empty")]
    EmptyExpansion,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no positive pair instances to train on")]
    NoPositives,

    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },

    #[error("span ({start}, {end}) out of range for {rows} rows")]
    SpanOutOfRange { start: usize, end: usize, rows: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("no prediction for sample {0}")]
    MissingPrediction(String),

    #[error("sample id {0} appears in both the training set and the pseudo-labelled set")]
    IdCollision(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, err: &serde_json::Error) -> Self {
        Error::Parse {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
