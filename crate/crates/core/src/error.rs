use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("value {value} of `{name}` lies outside [{lower}, {upper}]")]
    OutOfRange {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("Newton iteration failed to converge at step {step} (t = {time:.6} s) after {levels} step halvings")]
    NonConvergence { step: usize, time: f64, levels: u32 },

    #[error("runaway stiffness degradation at step {step}: eta = {eta:.3e} on link dof {link_dof}")]
    Degradation { step: usize, link_dof: usize, eta: f64 },

    #[error("Grassmann map is singular: {0}")]
    Singular(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("model is not trained: {0}")]
    Untrained(String),

    #[error("artifact format error in {path:?}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("too many failed draws: {failed} of {total}")]
    Envelope { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
