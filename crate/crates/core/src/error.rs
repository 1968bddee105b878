use thiserror::Error;

/// Errors raised by the solver, evaluators and loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("policy incompatible with model: {0}")]
    PolicyIncompatible(String),

    #[error("policy not irreducible")]
    NotIrreducible,

    #[error("ill-conditioned system (relative residual {residual:.3e})")]
    IllConditioned { residual: f64 },

    #[error("singular system")]
    Singular,

    #[error("iteration limit exceeded ({0} iterations)")]
    IterationLimit(usize),

    #[error("bracket invalid: {0}")]
    BracketInvalid(String),

    #[error("power iteration did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("policy space too large ({0} policies)")]
    PolicySpaceTooLarge(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
