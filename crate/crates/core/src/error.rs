use std::path::PathBuf;

/// Errors produced anywhere in the imputation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or matrix shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A value went non-finite or an iterative routine failed to settle.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed user-supplied data (files, flags, configs).
    #[error("input error: {0}")]
    Input(String),

    /// A masked reduction had nothing to reduce over.
    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error("{path}: {source}")]
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
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
