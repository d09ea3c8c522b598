use thiserror::Error;

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] drpets_core::Error),
    #[error("episode {episode}: {source}")]
    Episode {
        episode: usize,
        #[source]
        source: drpets_core::Error,
    },
    #[error("grid point {param} had no successful episodes ({failed} failed)")]
    NoSuccesses { param: f64, failed: usize },
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
    #[error("malformed results file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
