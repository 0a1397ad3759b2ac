use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("degenerate batch: standard deviation of the pre-activation is zero")]
    DegenerateBatch,
    #[error("degenerate layer: standard deviation across units is zero")]
    DegenerateLayer,
    #[error("nonlinearity {0} has no usable second derivative")]
    UnsupportedNonlinearity(&'static str),
    #[error("divergence at step {step}: {what} became nonfinite")]
    Divergence { step: usize, what: &'static str },
    #[error("singular Hessian (condition number {cond:.3e})")]
    Singular { cond: f64 },
    #[error("degenerate normalized step: pre-projection vector is zero")]
    DegenerateStep,
    #[error("outside the stochastic model: {0}")]
    OutOfModel(String),
    #[error("norm model broke down at step {step}: norm {norm:.3e}")]
    ModelBreakdown { step: usize, norm: f64 },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("every cell diverged at lambda = {lambda}")]
    AllDiverged { lambda: f64 },
    #[error("incomplete grid: {0}")]
    IncompleteGrid(String),
    #[error("unknown rule `{0}`")]
    UnknownRule(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
