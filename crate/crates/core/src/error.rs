use thiserror::Error;

#[derive(Debug, Error)]
pub enum MraError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("size guard exceeded: {what} = {got} exceeds limit {limit}")]
    SizeGuard {
        what: &'static str,
        got: usize,
        limit: usize,
    },
    #[error("retry budget exhausted after {0} attempts")]
    RetryBudgetExhausted(usize),
    #[error("search budget of {0} nodes exceeded")]
    BudgetExceeded(u64),
    #[error("inconsistent difference profile: {0}")]
    InconsistentProfile(String),
    #[error("signal is not in the requested class: {0}")]
    ClassCheck(String),
    #[error("non-finite log-likelihood at iteration {0}")]
    NonFiniteLikelihood(usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("frequency set construction failed after {tries} tries (best floor {best_floor:.3e}, best c1 {best_c1:.3e})")]
    LambdaConstruction {
        tries: usize,
        best_floor: f64,
        best_c1: f64,
        best: Vec<i64>,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MraError>;
