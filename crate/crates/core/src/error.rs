use thiserror::Error;

/// Errors raised by the solver, its assembly stages and the reference oracles.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported drift model: {0}")]
    UnsupportedModel(String),

    #[error(
        "factorization of M + alpha*I failed (alpha = {alpha:e}); the regularization is too small, increase alpha"
    )]
    RegularizationTooSmall { alpha: f64 },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("step size underflow at t = {t} (h = {h:e}); the system is stiff, increase alpha")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("width of term {term} collapsed to {width:e} at t = {t}")]
    WidthCollapse { term: usize, width: f64, t: f64 },

    #[error("total probability drifted to {total} at t = {t}")]
    ConservationViolated { t: f64, total: f64 },

    #[error("initial state has total probability {0}; renormalize before integrating")]
    NotNormalized(f64),

    #[error("maximum number of steps ({steps}) reached at t = {t}")]
    MaxStepsExceeded { steps: usize, t: f64 },

    #[error("optimizer did not converge after {iterations} iterations (objective {objective:e})")]
    NoConvergence { iterations: usize, objective: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
