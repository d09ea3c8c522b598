use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("model produced a non-finite value: {0}")]
    ModelDivergence(String),

    #[error("training diverged for member {member} at epoch {epoch}")]
    TrainingDivergence { member: usize, epoch: usize },

    #[error("episode aborted at step {step}: {reason}")]
    EpisodeAborted { step: usize, reason: String },

    #[error("planning failed: {0}")]
    Planning(String),

    #[error("oracle refused: {0}")]
    OracleRefused(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} contains a non-finite entry")))
    }
}
