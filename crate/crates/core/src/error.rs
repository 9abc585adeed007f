use std::path::PathBuf;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {component} loss at step {step}")]
    NonFinite { component: &'static str, step: u64 },
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("load error in {context}: {message}")]
    Load { context: String, message: String },
    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] autodiff::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// Short machine-readable tag used in structured CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Shape(_) => "shape",
            Error::NonFinite { .. } => "non-finite-loss",
            Error::UndefinedCorrelation(_) => "undefined-correlation",
            Error::Load { .. } => "load",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Io { .. } => "io",
            Error::Config(_) => "config",
            Error::Engine(_) => "engine",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
