use thiserror::Error;

/// Errors raised across the crate. `is_precondition` separates caller mistakes
/// (bad config, violated contracts) from numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh spec: {0}")]
    InvalidSpec(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invariant violation: {msg}")]
    InvariantViolation { msg: String, simplex: Option<(usize, usize)> },
    #[error("degree {degree} out of range for this operation (allowed {lo}..={hi})")]
    DegreeOutOfRange { degree: usize, lo: usize, hi: usize },
    #[error("degenerate {degree}-simplex {id} (zero volume)")]
    DegenerateSimplex { degree: usize, id: usize },
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("boundary data sign violation: {0}")]
    SignViolation(String),
    #[error("boundary condition mismatch: {0}")]
    BcMismatch(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("solver did not converge: {0}")]
    Convergence(String),
    #[error("rank indecision: singular value gap {gap:.3e} below required factor {required}")]
    RankIndecision { gap: f64, required: f64 },
    #[error("integer overflow in exact rank computation")]
    RankOverflow,
    #[error("generator budget {budget} too small; at least {required} needed")]
    BudgetTooSmall { budget: usize, required: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_)
                | Error::Parse(_)
                | Error::InvariantViolation { .. }
                | Error::DegreeOutOfRange { .. }
                | Error::SignViolation(_)
                | Error::BcMismatch(_)
                | Error::Precondition(_)
                | Error::BudgetTooSmall { .. }
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
