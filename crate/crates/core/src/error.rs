use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (shape, size, range).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value appeared while evaluating a loss graph.
    #[error("numeric failure at node {node} ({op}): value {value}")]
    NumericFailure {
        node: usize,
        op: &'static str,
        value: f64,
    },

    /// Training produced a NaN or infinite loss.
    #[error("non-finite loss at epoch {epoch}, iteration {iteration}: {detail}")]
    Divergence {
        epoch: usize,
        iteration: usize,
        detail: String,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by non-finite arithmetic.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NumericFailure { .. } | Error::Divergence { .. })
    }
}
