use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pendulum parameters: {0}")]
    Params(String),

    #[error("invalid plan: {0}")]
    Plan(String),

    #[error("simulation diverged at step {step}")]
    Divergence { step: usize },

    #[error(transparent)]
    Core(#[from] dfpd_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
