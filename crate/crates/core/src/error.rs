use std::io;

use thiserror::Error;

use crate::config::ConfigError;
use crate::geometry::GeometryError;
use crate::io::PlyError;
use crate::tensor::TensorError;

/// Crate-wide error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error("invalid network configuration: {0}")]
    Network(String),
    #[error("data mismatch: {0}")]
    Mismatch(String),
    #[error("training diverged at epoch {epoch}, step {step}: {term} is not finite")]
    Divergence {
        epoch: usize,
        step: usize,
        term: &'static str,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code for the command-line tool: 2 usage, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Network(_) => 2,
            Error::Divergence { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
