use thiserror::Error;

use crate::multiindex::MultiIndex;

/// Errors surfaced by the library. Numerical infeasibility of hypothesis
/// parameters is *not* an error (see `AdmissibilityReport::feasible`); these
/// variants cover contract violations and diagnostic failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("multi-index length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("empty domain: {0}")]
    EmptyDomain(String),

    #[error("order {0} exceeds the supported maximum {max}", max = crate::multiindex::MAX_ORDER)]
    OrderTooHigh(u32),

    #[error("missing derivative table entry for index {0:?}")]
    MissingDerivative(MultiIndex),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("infeasible: {reason} (limit {limit})")]
    Infeasible { reason: String, limit: f64 },

    #[error("invalid integration step: {0}")]
    InvalidStep(String),

    #[error("history lookup at t = {t} outside available span [{lo}, {hi}]")]
    HistoryOutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("solution diverged (non-finite state) at t = {0}")]
    Divergence(f64),

    #[error("insufficient grid: {0}")]
    InsufficientGrid(String),

    #[error("non-contraction: weighted-gap ratio {rate} >= 1 over {window} consecutive iterations")]
    NonContraction { rate: f64, window: usize },

    #[error("iteration budget exhausted after {0} iterations (gap {1:e} > tol {2:e})")]
    IterationBudget(usize, f64, f64),

    #[error("tracking horizon too short: tail bound {tail:e} exceeds {tol:e}; need t_f >= {required}")]
    HorizonTooShort { tail: f64, tol: f64, required: f64 },

    #[error("stencil too coarse: Richardson disagreement {0:e} exceeds tolerance {1:e}")]
    StencilTooCoarse(f64, f64),

    #[error("chart mismatch: {0}")]
    ChartMismatch(String),

    #[error("internal consistency failure: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
