use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("consistency error: {0}")]
    Consistency(String),

    /// A covariance matrix had an eigenvalue more negative than the repair tolerance.
    #[error("covariance is not positive semidefinite: worst eigenvalue {worst:e} (largest {largest:e})")]
    PsdViolation { worst: f64, largest: f64 },

    #[error("numerical blowup at step {step} (t = {t}){}: {what}", trajectory.map(|i| format!(" in trajectory {i}")).unwrap_or_default())]
    NumericalBlowup {
        step: u64,
        t: f64,
        trajectory: Option<usize>,
        what: String,
    },

    #[error("kurtosis undefined: all samples are zero")]
    UndefinedKurtosis,

    #[error("drift matrix is singular")]
    SingularDrift,

    #[error("no separatrix: the friction coefficient does not change sign")]
    NoSeparatrix,
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Attach a trajectory index to a blowup error.
    pub fn in_trajectory(self, index: usize) -> Self {
        match self {
            Error::NumericalBlowup { step, t, what, .. } => Error::NumericalBlowup {
                step,
                t,
                trajectory: Some(index),
                what,
            },
            other => other,
        }
    }
}
