use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
    #[error("unknown document id `{0}`")]
    UnknownDocId(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("length mismatch: {what} (expected {expected}, got {got})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("sequence of length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("parameter layout mismatch between policy and reference")]
    LayoutMismatch,
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("bad file format: {0}")]
    Format(String),
    #[error("generator call failed: {0}")]
    Generator(String),
    #[error("http status {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("unparseable judge reply: {0:?}")]
    JudgeReply(String),
    #[error("config: {0}")]
    Config(String),
    #[error("training: {0}")]
    Training(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
