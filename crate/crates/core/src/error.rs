use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("KL divergence undefined: q[{index}] = 0 where p[{index}] = {p}")]
    KlUndefined { index: usize, p: f64 },

    #[error("not a valid pmf: {0}")]
    NotNormalized(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index} out of range 0..{len}")]
    OutOfRange { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible constraint set: constraint #{index} ({label}) cannot hold on the simplex together with the constraints before it")]
    Infeasible { index: usize, label: String },

    #[error("solver did not converge after {iterations} iterations (KKT residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("local problem failed at step k={step}, state {state}: {source}")]
    LocalSolve {
        step: usize,
        state: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("simulation diverged at step {step}: non-finite state")]
    Divergence { step: usize },

    #[error("line {line}: {message}")]
    Format { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
