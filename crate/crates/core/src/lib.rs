//! Personalized federated training of diffusion models: DDPM primitives,
//! the split client/server protocol that releases only forward-diffused
//! data, and an exact analytic local-DP accountant.

pub mod batch;
pub mod config;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod federation;
pub mod nn;
pub mod pipeline;
pub mod privacy;
pub mod rng;
pub mod schedule;

pub use batch::SampleBatch;
pub use denoiser::{
    build_trainable_denoiser, checkpoint_denoiser, oracle_denoiser, Denoiser,
    GaussianMixtureSpec, MlpDenoiser, OracleDenoiser, TrainingConfig,
};
pub use error::{Error, Result};
pub use schedule::{NoiseSchedule, SigmaMode};
