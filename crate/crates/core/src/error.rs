use std::path::PathBuf;

/// Failure modes shared by every module.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular evaluation: {0}")]
    Singularity(String),
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    #[error("{what} did not converge (final residual {residual:.3e})")]
    NotConverged { what: String, residual: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("under-resolved: {0}")]
    Resolution(String),
    #[error("insufficient range: {0}")]
    InsufficientRange(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
