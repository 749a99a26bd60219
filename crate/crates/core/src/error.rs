use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the lab.
///
/// The variants map onto the failure classes the CLI distinguishes: `Config`
/// is a validation failure (exit 1), everything else is a runtime failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("empty tape: {0}")]
    EmptyTape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("format error: {0}")]
    Format(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("empty class: {0}")]
    EmptyClass(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Validation(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
