use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("assembly failed on cell {cell}: {reason}")]
    AssemblyFailure { cell: usize, reason: String },

    #[error("singular linear system (pivot {pivot})")]
    SingularSystem { pivot: usize },

    #[error("degenerate stabilization parameter: every contribution vanishes")]
    DegenerateStabilization,

    #[error("{solver} did not converge; residual history {history:?}")]
    SolverFailure {
        solver: &'static str,
        history: Vec<f64>,
    },

    #[error("level-set advection failed: step {step:e} fell below the minimum {min_step:e} at t = {time}")]
    AdvectionFailure { step: f64, min_step: f64, time: f64 },

    #[error("the zero isocontour crosses no cell; one phase has vanished")]
    NoInterface,

    #[error("reinitialization did not converge; update norms {norms:?}")]
    ReinitFailure { norms: Vec<f64> },

    #[error("constraint gradients are linearly dependent (Gram pivot {pivot:e})")]
    DegenerateConstraints { pivot: f64 },

    #[error("line search trial {trial} failed: {source}")]
    LineSearch {
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: line {line}: {message}")]
    Config {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of a numerical solve, as opposed to bad input or I/O.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::SingularSystem { .. }
            | Error::SolverFailure { .. }
            | Error::AdvectionFailure { .. }
            | Error::NoInterface
            | Error::ReinitFailure { .. }
            | Error::DegenerateConstraints { .. }
            | Error::DegenerateStabilization
            | Error::AssemblyFailure { .. } => true,
            Error::LineSearch { source, .. } => source.is_solver_failure(),
            Error::InvalidArgument(_) | Error::Config { .. } | Error::Io { .. } => false,
        }
    }
}
