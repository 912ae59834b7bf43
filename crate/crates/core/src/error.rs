use std::path::PathBuf;

use crate::memory_bank::ClassId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("vector norm is below the degenerate threshold")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("feature dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),

    #[error("class {0} has no stored features")]
    EmptyClass(ClassId),

    #[error("class {class} pool holds {size} features, need at least {required}")]
    InsufficientPool {
        class: ClassId,
        size: usize,
        required: usize,
    },

    #[error("need {required} base classes with statistics, have {available}")]
    InsufficientBaseClasses { required: usize, available: usize },

    #[error("need at least 2 class prototypes, have {0}")]
    InsufficientClasses(usize),

    #[error("empty pool: {0}")]
    EmptyPool(&'static str),

    #[error("own-class density radius is degenerate ({0:e})")]
    DegenerateRadius(f64),

    #[error("negative loss {value} at index {index}")]
    NegativeLoss { index: usize, value: f64 },

    #[error("non-positive weight {value} at index {index}")]
    NonpositiveWeight { index: usize, value: f64 },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("missing config key `{0}`")]
    MissingConfigKey(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_)
            | Error::MissingConfigKey(_)
            | Error::InvalidGrid(_)
            | Error::CheckpointMismatch(_) => 2,
            Error::Io { .. } | Error::Parse(_) => 3,
            _ => 4,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
