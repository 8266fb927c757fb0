use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

/// Location and message of a syntax error in an input file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    /// 1-based line number; 0 when the error is not tied to a line.
    pub line: usize,
    pub msg: String,
}

impl ParseError {
    pub fn new(line: usize, msg: impl Into<String>) -> Self {
        ParseError { line, msg: msg.into() }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line > 0 {
            write!(f, "line {}: {}", self.line, self.msg)
        } else {
            f.write_str(&self.msg)
        }
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("missing {what}: {}", path.display())]
    Missing { what: &'static str, path: PathBuf },
    #[error("{}:{}: {}", path.display(), err.line, err.msg)]
    Parse { path: PathBuf, err: ParseError },
    #[error("{0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    /// Process exit code: 2 missing artifact, 3 input error, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Missing { .. } => 2,
            AppError::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => 2,
            AppError::Parse { .. } | AppError::Input(_) | AppError::Io { .. } => 3,
            AppError::Numerical(_) => 4,
        }
    }

    pub fn parse(path: &Path, err: ParseError) -> Self {
        AppError::Parse { path: path.to_path_buf(), err }
    }

    pub fn io(context: impl fmt::Display, source: io::Error) -> Self {
        AppError::Io { context: context.to_string(), source }
    }

    pub fn missing(what: &'static str, path: &Path) -> Self {
        AppError::Missing { what, path: path.to_path_buf() }
    }
}

impl From<equiboost_core::Error> for AppError {
    fn from(e: equiboost_core::Error) -> Self {
        match e {
            equiboost_core::Error::NonFinite { .. } => AppError::Numerical(e.to_string()),
            other => AppError::Input(other.to_string()),
        }
    }
}

/// Reads a file, mapping a missing file to [`AppError::Missing`].
pub fn read_to_string(path: &Path, what: &'static str) -> AppResult<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => AppError::missing(what, path),
        _ => AppError::io(path.display(), e),
    })
}
