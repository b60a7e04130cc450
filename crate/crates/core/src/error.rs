use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("case not covered by the affine solver: {0}")]
    CaseNotCovered(String),
    #[error("integrator error: {0}")]
    Integrator(String),
    #[error("Riccati solution blew up at t = {time}")]
    BlowUp { time: f64 },
    #[error("decoupling slope exploded: {0}")]
    Explosion(String),
    #[error("{solver} did not converge after {iterations} iterations (last update {residual:e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        trace: Vec<f64>,
    },
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("inventory condition fails: {0}")]
    InventoryCondition(String),
    #[error("regression basis error: {0}")]
    Basis(String),
    #[error("noise specification error: {0}")]
    Spec(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}
