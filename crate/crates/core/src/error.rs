use std::path::PathBuf;

/// Errors raised by the numerical kernels and the experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Shapes of the inputs do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A least-squares or inverse problem has no unique solution.
    #[error("rank deficient: {0}")]
    RankDeficient(String),

    /// An iterative method produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
