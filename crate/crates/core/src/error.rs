use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by corpus loading, training, and the retrieval pipeline.
///
/// Shape violations inside tensor operations are programming errors and
/// panic instead of returning a variant here.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate table id {id:?}")]
    DuplicateTableId { id: String },

    #[error("duplicate question id {id:?}")]
    DuplicateQuestionId { id: String },

    #[error("table {id:?}: row {row} has {found} cells, expected {expected}")]
    RaggedRow {
        id: String,
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("table {id:?}: header must have at least one cell")]
    EmptyHeader { id: String },

    #[error("table id must be non-empty")]
    EmptyTableId,

    #[error("question {id:?} must list at least one answer")]
    EmptyAnswers { id: String },

    #[error("question {id:?} references missing table {table_id:?}")]
    DanglingPositive { id: String, table_id: String },

    #[error("question {id:?}: positive table {table_id:?} contains none of its answers")]
    AnswerNotInPositive { id: String, table_id: String },

    #[error("malformed linearization: {message}")]
    MalformedLinearization { message: String },

    #[error("vocabulary is missing special token {token:?}")]
    MissingSpecial { token: String },

    #[error("vocabulary lists special token {token:?} more than once")]
    DuplicateSpecial { token: String },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("k = {k} out of range for index of {len} entries")]
    KOutOfRange { k: usize, len: usize },

    #[error("cannot evaluate an empty question set")]
    EmptyQuestionSet,

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("training requires batch_size >= 2, got {0}")]
    BatchTooSmall(usize),

    #[error("learning rate must be positive, got {0}")]
    NonPositiveLearningRate(f64),

    #[error("non-finite loss during gradient check")]
    NonFiniteLoss,

    #[error("infeasible synthetic spec: {message}")]
    InfeasibleSpec { message: String },

    #[error("invalid encoder config: {message}")]
    InvalidConfig { message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
