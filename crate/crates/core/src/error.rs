use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input parsing failure. `line` is 1-based and counts the header.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("no trajectories")]
    NoTrajectories,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("underdetermined fit: {0}")]
    Underdetermined(String),

    #[error("fit diverged: {0}")]
    FitDiverged(String),

    #[error("objective is not finite ({value}) at {point:?}")]
    NonFinite { point: Vec<f64>, value: f64 },

    #[error("grid specs of partial maps differ")]
    GridMismatch,

    #[error("no adversary: compromised server set is empty")]
    NoAdversary,

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Whether the failure is numeric (as opposed to bad input or config).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::FitDiverged(_) | Error::Underdetermined(_)
        )
    }
}
