//! Error type shared by all modules.

use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum EvmError {
    #[error("spatial metric is singular or not positive definite: {0}")]
    SingularMetric(String),
    #[error("lapse positivity violated: {0}")]
    LapsePositivityViolation(String),
    #[error("shift exceeds the causal bound 1 - |X/N|^2 > 0: {0}")]
    ShiftTooLarge(String),
    #[error("distribution support reached the guard shells of the momentum lattice: {0}")]
    SupportOverflow(String),
    #[error("gauge projection failed: {0}")]
    GaugeProjectionFailed(String),
    #[error("elliptic solvability violated (nonzero mean right-hand side): {0}")]
    EllipticSolvability(String),
    #[error("iterative solver diverged: {0}")]
    SolverDiverged(String),
    #[error("energy weights violate their constraints: {0}")]
    InvalidWeights(String),
    #[error("decay fit domain error: {0}")]
    FitDomain(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, EvmError>;
