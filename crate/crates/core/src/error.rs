use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("integration diverged: {0}")]
    IntegrationDiverged(String),

    #[error("downwash ordering violated: source at z={above_z} is not above ego at z={ego_z}")]
    Ordering { ego_z: f64, above_z: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("linearization produced non-finite entries at stage {stage}")]
    Linearization { stage: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("weights file {path}: line {line}: {message}")]
    WeightsParse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("grouping error: {0}")]
    Grouping(String),

    #[error("log {path}: row {row}: {message}")]
    Log {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
