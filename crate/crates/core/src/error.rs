//! Error type shared across the library.
//!
//! Recoverable failures (malformed input files, bad configuration values,
//! I/O problems) are reported through [`Error`]. Violations of internal
//! contracts — shape mismatches between tensors, out-of-range indices
//! produced by library code itself — panic instead.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Recoverable error raised by parsing, I/O, or configuration handling.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Underlying filesystem or stream failure.
    #[error("io error on {path}: {source}")]
    Io {
        /// File being read or written when the failure occurred.
        path: PathBuf,
        /// Original error from the standard library.
        #[source]
        source: std::io::Error,
    },

    /// A mesh or point-cloud file did not match its declared format.
    #[error("{path}:{line}: {msg}")]
    Parse {
        /// File that failed to parse.
        path: PathBuf,
        /// 1-based line number of the offending content (0 when unknown).
        line: usize,
        /// Human-readable description of the problem.
        msg: String,
    },

    /// A configuration key or value was rejected.
    #[error("{0}")]
    Config(String),

    /// A request was structurally valid but impossible to satisfy
    /// (e.g. asking for more coreset picks than there are points).
    #[error("{0}")]
    Invalid(String),

    /// An optimization run produced a non-finite or runaway value and was
    /// aborted.
    #[error("optimization diverged: {0}")]
    Diverged(String),
}

impl Error {
    /// Builds an [`Error::Io`] tagged with the file it concerns.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Builds an [`Error::Parse`] with a 1-based line number.
    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
