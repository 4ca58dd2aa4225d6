use std::fmt;

use thiserror::Error;

use crate::sim::SimLog;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which family of tightened sets an emptiness error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetKind {
    State,
    Input,
}

impl SetKind {
    /// Name of the tightened set in the schedule: `X~` or `U~`.
    pub fn symbol(self) -> &'static str {
        match self {
            SetKind::State => "X~",
            SetKind::Input => "U~",
        }
    }
}

impl fmt::Display for SetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SetKind::State => f.write_str("state"),
            SetKind::Input => f.write_str("input"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("underdetermined fit: {transitions} transitions for {unknowns} regressors")]
    Underdetermined { transitions: usize, unknowns: usize },

    #[error("regression matrix is rank deficient (rank {rank} of {unknowns})")]
    RankDeficient { rank: usize, unknowns: usize },

    #[error("no trajectory data")]
    EmptyData,

    #[error("tightened {which} set {}({index}) is empty", .which.symbol())]
    EmptyTightenedSet { index: usize, which: SetKind },

    #[error("Riccati iteration did not converge within {0} iterations")]
    NoConvergence(usize),

    #[error("gain is not stabilising: spectral radius of A+BK is {0}")]
    NotStabilizing(f64),

    #[error("quadratic cost is not convex (min pivot {0:e})")]
    NonConvex(f64),

    #[error("optimization problem is infeasible")]
    Infeasible,

    #[error("QP solver reached the iteration limit ({0})")]
    SolverMaxIterations(usize),

    #[error("no fixed point found on the search grid")]
    NoFixedPoint,

    #[error("closed loop infeasible at step {step}")]
    InfeasibleAtStep { step: usize, log: Box<SimLog> },

    #[error("empty log")]
    EmptyLog,

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
