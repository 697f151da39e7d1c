use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inputs that do not fit together (dimensions, counts, missing pieces).
    #[error("configuration error: {0}")]
    Config(String),

    /// A metric or functional produced a non-finite or singular value.
    #[error("numerical-domain error{}: {message}", at.map(|t| format!(" at t={t}")).unwrap_or_default())]
    NumericalDomain { message: String, at: Option<f64> },

    /// An integrated trajectory left the allowed region.
    #[error("domain escape: |z| = {norm:e} exceeded bound {bound:e} at t={t}")]
    DomainEscape { norm: f64, bound: f64, t: f64 },

    #[error("unreachable: node {from} (component {from_component}) cannot reach node {to} (component {to_component})")]
    Unreachable {
        from: usize,
        from_component: usize,
        to: usize,
        to_component: usize,
    },

    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("training diverged at epoch {epoch}; last finite loss {last_finite_loss}")]
    Training { epoch: usize, last_finite_loss: f64 },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::NumericalDomain {
            message: msg.into(),
            at: None,
        }
    }

    pub(crate) fn at_t(self, t: f64) -> Self {
        match self {
            Error::NumericalDomain { message, at: None } => Error::NumericalDomain {
                message,
                at: Some(t),
            },
            other => other,
        }
    }

    /// True for configuration-type failures (CLI exit code 2).
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parse { .. } | Error::Io(_) | Error::Csv(_))
    }
}
