use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("agent {agent_id}, column {column}: {message}")]
    InvalidObservation {
        agent_id: String,
        column: String,
        message: String,
    },

    #[error("no observations")]
    NoObservations,

    #[error("unobserved alternative attributes: group {group}, alternative {alternative}")]
    UnobservedAlternative { group: String, alternative: String },

    #[error("rank-deficient design: dependent columns {columns:?}")]
    RankDeficient { columns: Vec<String> },

    #[error("under-identified: {instruments} instruments for {endogenous} endogenous regressors")]
    UnderIdentified { instruments: usize, endogenous: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("segment {0:?} has no trained agents")]
    UnseenSegment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn obs(agent_id: &str, column: &str, message: impl Into<String>) -> Self {
        Error::InvalidObservation {
            agent_id: agent_id.to_string(),
            column: column.to_string(),
            message: message.into(),
        }
    }

    /// True for errors that stem from malformed inputs rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_)
                | Error::InvalidObservation { .. }
                | Error::NoObservations
                | Error::UnobservedAlternative { .. }
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Io(_)
        )
    }
}
