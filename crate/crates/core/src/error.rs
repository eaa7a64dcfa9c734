use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("smoothing parameter {gamma} must exceed M/R1 = {bound}")]
    Schedule { gamma: f64, bound: f64 },
    #[error("state outside the moving disk at node {node}: h_lower = {h}")]
    InfeasibleState { node: usize, h: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("scenario failed validation: {0}")]
    Validation(String),
    #[error("abnormal lower problem: cost multiplier is zero")]
    Abnormal,
    #[error("enumeration budget exceeded: {0} combinations")]
    Budget(u64),
    #[error("no feasible combination (best violation {best_violation})")]
    NoFeasible { best_violation: f64 },
    #[error("solve failed: {reason} (best infeasibility {best_infeasibility})")]
    SolveFailed { reason: String, best_infeasibility: f64 },
}

pub(crate) fn invalid(msg: &str) -> Error {
    Error::Invalid(String::from(msg))
}
