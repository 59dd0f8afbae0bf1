use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("coincident points: the unregularized diagonal has no finite value")]
    Coincidence,

    #[error("sum did not reach tolerance {tolerance:e} within {terms} terms")]
    NonConvergence { tolerance: f64, terms: usize },

    #[error("sign change in window at r = {r:e}; subtract the background first")]
    Window { r: f64 },

    #[error("amplitude below noise floor (|B r^γ| = {signal:e}, floor {floor:e})")]
    NonIdentifiable { signal: f64, floor: f64 },

    #[error("fit failed to converge: {0}")]
    FitDiverged(String),

    #[error("fit residual {residual:e} exceeds bound {bound:e}")]
    FitResidual { residual: f64, bound: f64 },

    #[error("degenerate coupling dependence: B(1) - B(0) = {0:e}")]
    Degenerate(f64),

    #[error("non-finite result: {0}")]
    NonFinite(String),

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("extrapolation did not converge: {0}")]
    Extrapolation(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
