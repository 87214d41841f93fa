//! The noise-prediction contract and its two realizations: an analytic
//! Gaussian-mixture oracle and a small trainable conditional network.

mod checkpoint;
mod mlp;
mod oracle;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use mlp::MlpDenoiser;
pub use oracle::{oracle_denoiser, GaussianMixtureSpec, OracleDenoiser};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A noise predictor `z_hat(x_t, t, label?)`.
///
/// `predict` must return an array of the same shape as `x_t`, finite for
/// finite input, with no internal randomness. `ts` carries one step index
/// per row of `x_t`.
pub trait Denoiser: Send + Sync {
    fn predict(&self, x_t: &Array2<f32>, ts: &[usize], labels: Option<&[u16]>) -> Array2<f32>;

    /// Per-sample shape of the data this denoiser models (e.g. `[1, 28, 28]`).
    fn sample_shape(&self) -> Vec<usize>;

    fn trainable(&self) -> bool {
        false
    }

    /// Flat view of all parameters; empty for non-trainable denoisers.
    fn param_vector(&self) -> Vec<f64> {
        Vec::new()
    }

    fn set_param_vector(&mut self, params: &[f64]) -> Result<()> {
        if params.is_empty() {
            Ok(())
        } else {
            Err(Error::NotTrainable)
        }
    }

    /// Batch noise-prediction loss and its gradient with respect to
    /// `param_vector`, or `None` for non-trainable denoisers.
    fn loss_grad(
        &self,
        x_t: &Array2<f32>,
        ts: &[usize],
        labels: Option<&[u16]>,
        z: &Array2<f32>,
    ) -> Option<(f64, Vec<f64>)> {
        let _ = (x_t, ts, labels, z);
        None
    }

    fn clone_box(&self) -> Box<dyn Denoiser>;

    /// Concrete-type access for checkpointing.
    fn as_any(&self) -> &dyn std::any::Any;
}

impl Clone for Box<dyn Denoiser> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Serialize any trainable denoiser behind the trait object; analytic
/// denoisers have no parameters to checkpoint.
pub fn checkpoint_denoiser(d: &dyn Denoiser) -> Result<Vec<u8>> {
    match d.as_any().downcast_ref::<MlpDenoiser>() {
        Some(mlp) => Ok(write_checkpoint(mlp)),
        None => Err(Error::NotTrainable),
    }
}

/// Optimizer used by the training loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    Momentum { momentum: f64 },
}

/// How integer steps are embedded for the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeEmbedKind {
    #[default]
    Sinusoidal,
    Learned,
}

/// Hyperparameters for the trainable denoiser and the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub label_conditioning: bool,
    pub time_embed_dim: usize,
    pub time_embed: TimeEmbedKind,
    pub hidden: Vec<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            steps: 2000,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            label_conditioning: false,
            time_embed_dim: 16,
            time_embed: TimeEmbedKind::Sinusoidal,
            hidden: vec![128, 128],
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.steps == 0 || self.time_embed_dim == 0 {
            return Err(Error::Config("counts must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if let OptimizerKind::Momentum { momentum } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return Err(Error::Config("momentum must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }
}

/// Build the default trainable denoiser for flat samples of the given shape.
///
/// `num_labels` enables the additive label embedding; it is required when
/// `config.label_conditioning` is set.
pub fn build_trainable_denoiser(
    config: &TrainingConfig,
    sample_shape: &[usize],
    t_max: usize,
    num_labels: Option<u16>,
) -> Result<MlpDenoiser> {
    config.validate()?;
    let input_dim: usize = sample_shape.iter().product();
    if input_dim == 0 {
        return Err(Error::Config("sample shape must be non-empty".into()));
    }
    if config.label_conditioning && num_labels.is_none() {
        return Err(Error::Config("label_conditioning requires num_labels".into()));
    }
    MlpDenoiser::with_shape(config, sample_shape.to_vec(), t_max, num_labels)
}
