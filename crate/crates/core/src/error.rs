use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported layer kind `{0}`")]
    UnsupportedLayer(String),

    #[error("backward pass for layer `{0}` called without a cached forward input")]
    MissingForwardCache(String),

    #[error("channel excluded from entropy estimate: {0:?}")]
    ExcludedChannel(crate::entropy::GridStatus),

    #[error("FLOPS budget infeasible at layer {layer}: best achievable ratio {best:.4} exceeds target {target:.4}")]
    InfeasibleBudget { layer: usize, best: f64, target: f64 },

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("malformed file {path}: {reason} (byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownName {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
