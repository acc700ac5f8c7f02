use std::path::PathBuf;

use crate::checkpoint::CheckpointError;
use crate::world::Task;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown {what} `{got}` (valid: {valid})")]
    UnknownName { what: &'static str, got: String, valid: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("could not generate a {task} layout from seed {seed} after {attempts} attempts")]
    LayoutGeneration { task: Task, seed: u64, attempts: u64 },
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("action id {0} outside the action table")]
    InvalidAction(usize),
    #[error("latent {z} out of range for latent_dim {k}")]
    LatentOutOfRange { z: usize, k: usize },
    #[error("input length {got} does not match expected {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("non-finite values: {0}")]
    NonFinite(String),
    #[error("non-finite gradient in layer {0}")]
    NonFiniteGradient(String),
    #[error("probability vector does not sum to 1 (sum {0})")]
    NotNormalized(f64),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("incompatible policies: {0}")]
    Incompatible(String),
    #[error("rollout failed in env {env}: {source}")]
    Rollout { env: usize, source: Box<Error> },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    ConfigParse(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
