use std::path::PathBuf;

use thiserror::Error;

use crate::config::ConfigError;
use crate::geometry::GeometryError;
use crate::redundancy::RedundancyError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Redundancy(#[from] RedundancyError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("RAIL integrity: {0}")]
    Integrity(String),
    #[error("{0}")]
    Analytics(String),
    #[error("trace parse error at line {line}: {reason}")]
    TraceParse { line: usize, reason: String },
}

impl SimError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }
}
