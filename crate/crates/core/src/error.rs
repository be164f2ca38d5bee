use std::fmt;

use thiserror::Error;

/// Why a closed-form route is unavailable for a given rate vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Degeneracy {
    /// Discriminant of the characteristic quadratic is at or below tolerance.
    RepeatedRoots { discriminant: f64 },
    /// The regression intensity is zero; several coefficients divide by it.
    ZeroRegression,
    /// One characteristic root is zero (singular transient block).
    ZeroRoot,
    /// `det(B) = γ₁γ₂ − μ₂₁λ₁₂` is not positive.
    SingularTransientBlock { det: f64 },
    /// The total exit rate of a transient state is zero.
    ZeroExitRate { state: usize },
}

impl fmt::Display for Degeneracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Degeneracy::RepeatedRoots { discriminant } => write!(
                f,
                "repeated characteristic roots (discriminant {discriminant:e}); use the series exponential"
            ),
            Degeneracy::ZeroRegression => {
                write!(f, "mu21 = 0 makes the closed form undefined; use the series exponential")
            }
            Degeneracy::ZeroRoot => write!(f, "a characteristic root is zero"),
            Degeneracy::SingularTransientBlock { det } => {
                write!(f, "transient block is singular (det = {det:e})")
            }
            Degeneracy::ZeroExitRate { state } => {
                write!(f, "state {state} has zero total exit rate (infinite sojourn)")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("rate component {index} ({name}) is negative: {value}")]
    NegativeRate {
        index: usize,
        name: &'static str,
        value: f64,
    },

    #[error("time must be finite and nonnegative, got {0}")]
    InvalidTime(f64),

    #[error("degenerate model: {0}")]
    Degenerate(Degeneracy),

    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),

    #[error("invalid estimation input: {0}")]
    EstimationInput(String),

    #[error("table delta_t={delta_t}: cell ({row},{col}) is zero")]
    ZeroCell { delta_t: u32, row: usize, col: usize },

    #[error("hessian block is singular beyond regularization")]
    SingularHessian,

    #[error("table delta_t={delta_t}: no convergence after {iterations} iterations (last step {delta_norm:e})")]
    NonConvergence {
        delta_t: u32,
        iterations: usize,
        delta_norm: f64,
        trace: Vec<crate::estimation::IterationRecord>,
    },

    #[error("table delta_t={delta_t}: cell ({row},{col}) has zero expectation but {observed} observed")]
    IllDefinedCell {
        delta_t: u32,
        row: usize,
        col: usize,
        observed: u64,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),
}

impl From<Degeneracy> for Error {
    fn from(d: Degeneracy) -> Self {
        Error::Degenerate(d)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
