use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid primitive: {0}")]
    InvalidPrimitive(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value while computing moment k={k}")]
    NumericOverflow { k: usize },

    #[error("moment kinds do not match: {0}")]
    KindMismatch(String),

    #[error("moment matrix is not positive definite after maximum bias {bias:e}")]
    DegenerateMoments { bias: f64 },

    #[error("argument out of domain: {0}")]
    OutOfDomain(String),

    #[error("no convergence after {iterations} iterations (last objective {objective:e})")]
    NonConvergence { iterations: usize, objective: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("schema error in {path}: {message}")]
    Schema { path: String, message: String },

    #[error("non-finite output at {count} pixels, first: {first:?}")]
    NonFiniteOutput { count: usize, first: Vec<(usize, usize)> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Process exit code used by the command line frontend.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema { .. } | Error::InvalidConfig(_) | Error::InvalidPrimitive(_) => 2,
            Error::NumericOverflow { .. }
            | Error::DegenerateMoments { .. }
            | Error::NonConvergence { .. }
            | Error::NonFiniteOutput { .. } => 3,
            _ => 1,
        }
    }
}
