use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("training error: {0}")]
    Training(String),

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("decode error in {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("{file}:{line}: malformed line: {content:?}")]
    MalformedLine {
        file: PathBuf,
        line: usize,
        content: String,
    },

    #[error("{file}: manifest declares {declared} samples but lists {found}")]
    CountMismatch {
        file: PathBuf,
        declared: usize,
        found: usize,
    },

    #[error("{file}: labels are not dense in [0, {classes}): missing {missing:?}")]
    NonDenseLabels {
        file: PathBuf,
        classes: usize,
        missing: Vec<usize>,
    },

    #[error("bad container {path}: {reason}")]
    Container { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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

    pub fn is_ingestion(&self) -> bool {
        matches!(
            self,
            Error::Decode { .. }
                | Error::MissingFile(_)
                | Error::MalformedLine { .. }
                | Error::CountMismatch { .. }
                | Error::NonDenseLabels { .. }
                | Error::Container { .. }
                | Error::Io { .. }
                | Error::Json(_)
        )
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::Degenerate(_))
    }

    /// Process exit status: 2 configuration, 3 ingestion, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) => 2,
            e if e.is_ingestion() => 3,
            Error::Input(_) => 3,
            Error::Divergence { .. } | Error::Degenerate(_) | Error::Training(_) => 4,
            _ => 1,
        }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}
macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use shape_err;
