use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("branch {from}-{to} has zero series impedance")]
    ZeroImpedance { from: u32, to: u32 },

    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e} p.u.)")]
    PowerFlowDiverged { iterations: usize, mismatch: f64 },

    #[error("PCC voltage magnitude {0:.3e} p.u. is too small to define a reference frame")]
    UndefinedFrame(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("equilibrium solve failed for {device}: {reason}")]
    Equilibrium { device: String, reason: String },

    #[error("integration aborted at t = {time:.6} s: {reason}")]
    IntegrationAborted { time: f64, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("rollout diverged at step {step}")]
    RolloutDiverged { step: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("schema version mismatch in {what}: expected {expected}, found {found}")]
    SchemaVersion {
        what: String,
        expected: u32,
        found: u32,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
