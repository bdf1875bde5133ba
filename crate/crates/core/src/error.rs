use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("planner found no feasible trajectory")]
    Infeasible,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
