use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Matrix or vector dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An experiment or system configuration is invalid or infeasible.
    #[error("config error: {0}")]
    Config(String),

    /// An iterative procedure failed to converge within its budget.
    #[error("no convergence after {iters} iterations (last value {last})")]
    NoConvergence { iters: usize, last: f64 },

    /// I/O failure, with the offending path for context.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
