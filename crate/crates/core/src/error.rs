//! Error type shared by all modules.

use thiserror::Error;

/// Errors raised at public operation boundaries.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors that must agree in shape do not. No silent broadcasting.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A tensor carried NaN/Inf across a public boundary.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A precondition on an argument failed.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// An operation that requires samples received an empty batch.
    #[error("empty batch in {0}")]
    EmptyBatch(&'static str),

    /// A Langevin chain left the trust region or produced a non-finite
    /// gradient; reports where so the run can be diagnosed.
    #[error("langevin chain diverged at step {step}, chain {chain}")]
    ChainDiverged { step: usize, chain: usize },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArg(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
