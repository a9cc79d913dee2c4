use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data is malformed (dimension mismatch, non-finite entries, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("ground set of size {size} exceeds the brute-force limit of {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("infeasible partition: {0}")]
    Infeasible(String),

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Wraps a component error with round/step context, keeping its kind.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Domain(m) => Error::Domain(format!("{ctx}: {m}")),
            Error::Data(m) => Error::Data(format!("{ctx}: {m}")),
            Error::Numeric(m) => Error::Numeric(format!("{ctx}: {m}")),
            Error::Infeasible(m) => Error::Infeasible(format!("{ctx}: {m}")),
            other => other,
        }
    }

    /// True for errors caused by invalid configuration rather than a failed run.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
