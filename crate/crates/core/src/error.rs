//! Error type shared across the library.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid noise schedule: {0}")]
    Schedule(String),

    #[error("step index {t} out of range 1..={t_max}")]
    StepOutOfRange { t: usize, t_max: usize },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("invalid batch: {0}")]
    Batch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("denoiser is not trainable")]
    NotTrainable,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("invalid privacy query: {0}")]
    Privacy(String),

    #[error("target epsilon {target} unreachable: epsilon at t0=T is {at_t_max}")]
    TargetUnreachable { target: f64, at_t_max: f64 },

    #[error("malformed message: {0}")]
    Protocol(String),

    #[error("schedule fingerprint mismatch between client {client_id} and server")]
    FingerprintMismatch { client_id: u32 },

    #[error("dataset error: {0}")]
    Data(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
