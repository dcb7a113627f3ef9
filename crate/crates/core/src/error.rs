use thiserror::Error;

use crate::model::{ContextId, PatternViolation};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid failure pattern: {0}")]
    Pattern(#[from] PatternViolation),

    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown protocol `{0}`")]
    UnknownProtocol(String),

    #[error("protocol `{protocol}` cannot run in the {context} context")]
    ContextMismatch { protocol: String, context: ContextId },

    #[error("inbox has {got} slots, expected {expected}")]
    InboxArity { expected: usize, got: usize },

    #[error("conflicting labels for edge ({from_agent},{from_time}) -> ({to_agent},{to_time})")]
    LabelConflict {
        from_agent: usize,
        from_time: usize,
        to_agent: usize,
        to_time: usize,
    },

    #[error("graph shape mismatch: {0}")]
    GraphShape(String),

    #[error(
        "enumeration refused for n={n}, t={t}, horizon={horizon} in the {context} context: \
         about 2^{log2_estimate:.1} raw adversary choices (limit n <= {max_n})"
    )]
    BoundExceeded {
        n: usize,
        t: usize,
        horizon: usize,
        context: ContextId,
        log2_estimate: f64,
        max_n: usize,
    },

    #[error("run set is not a complete enumeration; knowledge cannot be evaluated on it")]
    IncompleteSystem,

    #[error("formula is undefined at run {run}, time {time}")]
    Undefined { run: usize, time: usize },

    #[error("point (run {run}, time {time}) is not in the run set")]
    NoSuchPoint { run: usize, time: usize },

    #[error("formula syntax error: {0}")]
    Formula(String),

    #[error("{0}")]
    Unsupported(String),
}
