use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// Each variant maps onto one stable CLI exit code (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative numerical routine failed to converge.
    #[error(
        "numerical error in {routine}: no convergence after {iterations} iterations \
         (last estimate {estimate}, residual {residual:e})"
    )]
    Numerical {
        routine: &'static str,
        iterations: usize,
        estimate: f64,
        residual: f64,
    },

    /// A record in an input file is malformed or inconsistent.
    #[error("ingestion error at line {line}: {message}")]
    Ingestion { line: usize, message: String },

    /// The caller asked for something that does not exist (unknown field, bad spec string).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn ingestion(line: usize, msg: impl Into<String>) -> Self {
        Error::Ingestion {
            line,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 usage, 3 ingestion, 4 numerical.
    ///
    /// Domain errors reaching the CLI come from bad flag values and count as usage
    /// errors. I/O failures exit with 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Domain(_) => 2,
            Error::Ingestion { .. } => 3,
            Error::Numerical { .. } => 4,
            Error::Io { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
