use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box ({x}, {y}, {w}, {h}): width/height must be non-negative and all fields finite")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },

    #[error("invalid detection confidence {0}: must be finite and in [0, 1]")]
    InvalidConfidence(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("image record has an empty image id")]
    EmptyImageId,

    #[error("no image contributes a value to the mean (all records excluded by the empty-image policy)")]
    NoContributingImages,

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("patient {patient_id}: {message}")]
    PredictionString { patient_id: String, message: String },

    #[error("PGM: {0}")]
    Pgm(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
