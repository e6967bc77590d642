use thiserror::Error;

/// Errors produced by the accq library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid bit width: {0}")]
    InvalidBitWidth(String),
    #[error("dot-product size must be positive, got {0}")]
    NonPositiveK(i64),
    #[error("non-finite input at index {0}")]
    NonFinite(usize),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("projection radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("enumeration of {required} points exceeds the budget of {budget}")]
    BudgetExceeded { required: u128, budget: u128 },
    #[error("infeasible request: {0}")]
    Infeasible(String),
    #[error("lemma hypothesis violated at index {0}")]
    HypothesisViolation(usize),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("overflow certificate failed: {0}")]
    CertificateFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_finite(xs: &[f64]) -> Result<()> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

pub(crate) fn check_same_len(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    Ok(())
}
