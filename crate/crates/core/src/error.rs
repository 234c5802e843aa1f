use crate::hilbert::Mode;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid dimension {dim}: need at least {min}")]
    InvalidDimension { dim: usize, min: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Population on the highest retained Fock level exceeds the tail tolerance.
    #[error("truncation guard: tail population {tail:.3e} on mode {mode} exceeds {tol:.1e}")]
    Truncation { mode: Mode, tail: f64, tol: f64 },

    #[error("flux {phi} is outside the principal branch (cos(pi*phi) = {cos:.3e})")]
    OutOfBranch { phi: f64, cos: f64 },

    #[error("step control did not converge: {steps} steps, residual {residual:.3e} > {tol:.1e}")]
    StepControl { steps: usize, residual: f64, tol: f64 },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
