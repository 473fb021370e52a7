use thiserror::Error;

use crate::network::ValidationReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}: {key}: {message}")]
    Parse {
        file: String,
        key: String,
        message: String,
    },

    #[error("invalid network:\n{0}")]
    Validation(ValidationReport),

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    /// `I - R^T` restricted to the empty cells could not be inverted.
    #[error("singular subsystem over {size} empty cells")]
    SingularSubsystem { size: usize },

    #[error("node {node}: no allocation with total time <= 1 covers the demand (needs {required})")]
    NodeInfeasible { node: String, required: f64 },

    #[error("node {node}: allocation solver stalled after {iterations} iterations (projected gradient {gradient:e})")]
    SolverStall {
        node: String,
        iterations: usize,
        gradient: f64,
    },

    #[error("linear program is {0}")]
    LinearProgram(&'static str),

    #[error("aggregate demand is not in the interior of the stability region (margin {margin:e})")]
    NotInterior { margin: f64 },

    #[error("unstable: rho1 + rho2 = {0} >= 1")]
    Unstable(f64),

    #[error("{0}")]
    NotApplicable(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

impl Error {
    /// True for failures of a numerical routine, as opposed to bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::SingularSystem(_)
                | Error::SingularSubsystem { .. }
                | Error::NodeInfeasible { .. }
                | Error::SolverStall { .. }
                | Error::LinearProgram(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
