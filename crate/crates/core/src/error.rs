use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument fell outside the domain of the function or operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A value could not be represented or a root could not be bracketed.
    #[error("range error: {0}")]
    Range(String),

    /// The catalog entry violates one of its own structural invariants.
    #[error("model consistency error: {0}")]
    ModelConsistency(String),

    #[error("quadrature did not converge on [{a}, {b}]: value {value:e}, error estimate {abs_err:e} after {intervals} intervals")]
    Quadrature {
        a: f64,
        b: f64,
        value: f64,
        abs_err: f64,
        intervals: usize,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("singularity: {0}")]
    Singularity(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Errors that stem from bad input rather than from the numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
