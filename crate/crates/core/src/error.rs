use thiserror::Error;

/// Errors raised by the adaptive TOST machinery.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical procedure failed to reach its tolerance.
    #[error("numeric error: {message}")]
    Numeric {
        message: String,
        /// Best available estimate when the procedure gave up.
        best_estimate: Option<f64>,
    },

    /// A root bracket does not contain a sign change.
    #[error("no sign change in bracket [{lo}, {hi}]")]
    Bracket { lo: f64, hi: f64 },

    /// Cholesky factorisation hit a non-positive pivot.
    #[error("matrix is not positive definite (pivot {pivot} at column {column})")]
    Decomposition { column: usize, pivot: f64 },

    /// The trial lifecycle was driven in an order it does not allow.
    #[error("state error: {0}")]
    State(String),

    /// A boundary or critical value could not be calibrated.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// The design makes a required ratio undefined.
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    /// Invalid configuration.
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>, best_estimate: Option<f64>) -> Self {
        Error::Numeric {
            message: msg.into(),
            best_estimate,
        }
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
