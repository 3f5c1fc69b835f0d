use std::path::PathBuf;

/// Errors raised anywhere in the library.
///
/// Each variant maps onto one machine-readable error class (see [`Error::class`]),
/// which the command-line front end prints verbatim.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("vocabulary error: unknown token `{0}`")]
    Vocabulary(String),
    #[error("scene spec error: {0}")]
    Spec(String),
    #[error("model contract error: {0}")]
    ModelContract(String),
    #[error("construction error: {0}")]
    Construction(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("freeze violation: {0}")]
    FreezeViolation(String),
    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short stable identifier of the error family.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension-error",
            Error::Config(_) => "config-error",
            Error::Usage(_) => "usage-error",
            Error::Range(_) => "range-error",
            Error::Schedule(_) => "schedule-error",
            Error::Vocabulary(_) => "vocabulary-error",
            Error::Spec(_) => "spec-error",
            Error::ModelContract(_) => "model-contract-error",
            Error::Construction(_) => "construction-error",
            Error::Divergence(_) => "divergence-error",
            Error::FreezeViolation(_) => "freeze-violation",
            Error::Corrupt { .. } => "corrupt-file-error",
            Error::Io { .. } => "io-error",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Dimension(format!($($arg)*))
    };
}
pub(crate) use dim_err;
