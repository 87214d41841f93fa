//! Experiment configuration: one TOML document drives partitioning,
//! training, sampling, accounting and evaluation. Every artifact a run
//! writes is stamped with the config hash and seed.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ClientPartition, PartitionSpec};
use crate::denoiser::TrainingConfig;
use crate::error::{Error, Result};
use crate::eval::ClassifierConfig;
use crate::privacy::BoundMode;
use crate::schedule::{NoiseSchedule, SigmaMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sigma_mode: SigmaMode,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { t_steps: 300, beta_start: 1e-4, beta_end: 0.04, sigma_mode: SigmaMode::Beta }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.t_steps, self.beta_start, self.beta_end, self.sigma_mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    Pfdm,
    /// per-client independent full-T training
    NonCollaborative,
    /// pooled-data full-T training
    NonPrivate,
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunMode::Pfdm => write!(f, "pfdm"),
            RunMode::NonCollaborative => write!(f, "non_collaborative"),
            RunMode::NonPrivate => write!(f, "non_private"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Idx,
    Cifar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: DataSource,
    /// synthetic resolution and corpus sizes
    pub side: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub corpus_seed: u64,
    /// idx file paths (images, labels) for train and test
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// cifar batch files
    pub cifar_train: Vec<PathBuf>,
    pub cifar_test: Vec<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            side: 8,
            train_per_class: 1300,
            test_per_class: 200,
            corpus_seed: 7,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            cifar_train: Vec::new(),
            cifar_test: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionConfig {
    pub clusters: Vec<Vec<u16>>,
    pub majority_count: usize,
    pub minority_count: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            clusters: vec![vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8, 9]],
            majority_count: 5000,
            minority_count: 50,
        }
    }
}

impl PartitionConfig {
    /// One client per cluster with the majority/minority roles reversed
    /// between them.
    pub fn to_spec(&self, seed: u64) -> PartitionSpec {
        PartitionSpec {
            clusters: self.clusters.clone(),
            clients: (0..self.clusters.len())
                .map(|k| ClientPartition {
                    majority_cluster: k,
                    majority_count: self.majority_count,
                    minority_count: self.minority_count,
                })
                .collect(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrivacyConfig {
    pub delta: f64,
    pub bound_mode: BoundMode,
    /// asserted per-coordinate bound in clip mode; observed in report mode
    pub coord_bound: f64,
    pub clip: bool,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self { delta: 1e-5, bound_mode: BoundMode::PerCoordinate, coord_bound: 1.0, clip: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub samples_per_class: usize,
    pub sample_seed: u64,
    pub classifier: ClassifierConfig,
    pub classifier_seeds: Vec<u64>,
    pub reference_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples_per_class: 100,
            sample_seed: 1000,
            classifier: ClassifierConfig::default(),
            classifier_seeds: vec![1, 2, 3],
            reference_seed: 500,
        }
    }
}

/// Top-level experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: RunMode,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub num_labels: u16,
    pub t0: usize,
    /// points released per client; 0 means the whole client dataset
    pub release_count: usize,
    pub schedule: ScheduleConfig,
    pub data: DataConfig,
    pub partition: PartitionConfig,
    pub local_training: TrainingConfig,
    pub global_training: TrainingConfig,
    pub privacy: PrivacyConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Pfdm,
            seed: 1,
            output_dir: PathBuf::from("out"),
            num_labels: 10,
            t0: 60,
            release_count: 0,
            schedule: ScheduleConfig::default(),
            data: DataConfig::default(),
            partition: PartitionConfig::default(),
            local_training: TrainingConfig {
                label_conditioning: true,
                steps: 3000,
                batch_size: 64,
                learning_rate: 2e-3,
                hidden: vec![128, 128],
                ..TrainingConfig::default()
            },
            global_training: TrainingConfig {
                label_conditioning: true,
                steps: 6000,
                batch_size: 64,
                learning_rate: 2e-3,
                hidden: vec![128, 128],
                ..TrainingConfig::default()
            },
            privacy: PrivacyConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.t0 == 0 || self.t0 > self.schedule.t_steps {
            return Err(Error::Config(format!(
                "t0 = {} must lie in 1..={}",
                self.t0, self.schedule.t_steps
            )));
        }
        self.schedule.build()?;
        self.local_training.validate()?;
        self.global_training.validate()?;
        if self.num_labels == 0 {
            return Err(Error::Config("num_labels must be positive".into()));
        }
        Ok(())
    }

    /// Hash of the canonical serialization; stamped on artifacts.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml().as_bytes());
        let digest = hasher.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
