use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} is not finite at x = {x:?}")]
    Evaluation { what: &'static str, x: Vec<f64> },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("dense Hessian unavailable for `{name}`: dimension {dim} exceeds cap {cap}")]
    DenseUnavailable { name: String, dim: usize, cap: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("shifted matrix is not positive definite (shift = {shift:e})")]
    ShiftTooSmall { shift: f64 },

    #[error("Krylov subspace exhausted at dimension {dim} (< n = {n}) without an acceptable step")]
    SubspaceExhausted { dim: usize, n: usize },

    #[error("model does not predict a decrease (q = {q:e})")]
    ModelDecrease { q: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
