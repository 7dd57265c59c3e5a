use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("unsupported sample rate {0} Hz (only 16000 Hz mono is accepted)")]
    UnsupportedRate(u32),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("{} grid point(s) failed: {}", .0.len(), describe_failures(.0))]
    GridPoints(Vec<(String, Error)>),
}

fn describe_failures(failures: &[(String, Error)]) -> String {
    failures
        .iter()
        .map(|(p, e)| format!("{p}: {e}"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class: 2 validation, 3 I/O, 4 numeric.
    /// Grid failures report the most severe code among their points.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::Numeric(_) | Error::Internal(_) => 4,
            Error::GridPoints(f) => f.iter().map(|(_, e)| e.exit_code()).max().unwrap_or(4),
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
