use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("backward requires a 1x1 root, got {0:?}")]
    NonScalarRoot((usize, usize)),

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("row {row} is not unit-norm (norm {norm})")]
    NotUnitNorm { row: usize, norm: f64 },

    #[error("item {0} has no users")]
    IsolatedItem(usize),

    #[error("user {user} has {len} candidate items, fewer than k = {k}")]
    ListTooShort { user: usize, len: usize, k: usize },

    #[error("insufficient interactions to fill lists for users {0:?}")]
    InsufficientInteractions(Vec<String>),

    #[error("training diverged at epoch {epoch}: non-finite objective")]
    Diverged { epoch: usize },

    #[error("target NDCG {target} unreachable: best achieved {best}")]
    TargetUnreachable { target: f64, best: f64 },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
