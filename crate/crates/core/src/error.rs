use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("sample is empty or carries zero total weight")]
    EmptySample,

    #[error("empirical model requires a kernel bandwidth for {0}")]
    MissingBandwidth(&'static str),

    #[error("density {value:e} is not positive at x1 = {x1}")]
    NonPositiveDensity { x1: f64, value: f64 },

    #[error("first-order condition solve did not converge at grid node {node} (x1 = {x1})")]
    RootNotFound { node: usize, x1: f64 },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("degenerate moment system: a0*b1 - a1*b0 = {det:e}")]
    DegenerateMoments { det: f64 },

    #[error("payoff expression error at byte {pos}: {msg}")]
    Expression { pos: usize, msg: String },

    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(value: f64, context: impl FnOnce() -> String) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { context: context() })
    }
}
