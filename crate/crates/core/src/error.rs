use std::path::PathBuf;

/// Errors produced anywhere in the editing pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("optimization error: non-finite gradient in {param}")]
    NonFiniteGradient { param: String },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("class {0} has no members")]
    EmptyClass(usize),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch for {0}")]
    Checksum(String),

    #[error("unsupported session version {found} (expected {expected})")]
    Migration { found: u32, expected: u32 },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("rejected: {0}")]
    Rejected(String),

    #[error("a retrain job is already running")]
    Busy,

    #[error("nothing to {0}")]
    NoOp(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
