//! End-to-end experiment runner: corpus, norm policy, partition, one of
//! three training modes, and conditional sampling from the result.
//!
//! Modes: `pfdm` (the split protocol), `non_collaborative` (per-client
//! independent full-T models, the private extreme) and `non_private`
//! (one model on the pooled raw data, the non-private extreme).

use rand::RngCore;

use crate::batch::SampleBatch;
use crate::config::{DataConfig, DataSource, ExperimentConfig, RunMode};
use crate::data::{
    apply_norm_policy, load_cifar10_bin, load_mnist_idx, partition, synthetic_digits, NormMode,
    NormPolicy, NormReport, PartitionManifest,
};
use crate::denoiser::{build_trainable_denoiser, Denoiser, TrainingConfig};
use crate::diffusion::{sample_ddpm, train_ddpm};
use crate::error::{Error, Result};
use crate::federation::{
    pfdm_sample, run_federation, AuditEntry, ClientState, FederationConfig, InProcessTransport,
    Transport,
};
use crate::privacy::{theorem1_epsilon, BoundMode, PrivacyQuery, PrivacyReport};
use crate::rng;
use crate::schedule::NoiseSchedule;

/// Train and held-out test data.
pub struct Corpus {
    pub train: SampleBatch,
    pub test: SampleBatch,
}

/// Load the configured data source.
pub fn load_corpus(cfg: &DataConfig) -> Result<Corpus> {
    match cfg.source {
        DataSource::Synthetic => Ok(Corpus {
            train: synthetic_digits(cfg.train_per_class, cfg.side, cfg.corpus_seed)?,
            test: synthetic_digits(cfg.test_per_class, cfg.side, cfg.corpus_seed ^ 0x5eed)?,
        }),
        DataSource::Idx => {
            let need = |p: &Option<std::path::PathBuf>, what: &str| {
                p.clone().ok_or_else(|| Error::Config(format!("idx source needs {what}")))
            };
            Ok(Corpus {
                train: load_mnist_idx(
                    &need(&cfg.train_images, "train_images")?,
                    &need(&cfg.train_labels, "train_labels")?,
                )?,
                test: load_mnist_idx(
                    &need(&cfg.test_images, "test_images")?,
                    &need(&cfg.test_labels, "test_labels")?,
                )?,
            })
        }
        DataSource::Cifar => {
            if cfg.cifar_train.is_empty() || cfg.cifar_test.is_empty() {
                return Err(Error::Config("cifar source needs cifar_train and cifar_test".into()));
            }
            Ok(Corpus {
                train: load_cifar10_bin(&cfg.cifar_train)?,
                test: load_cifar10_bin(&cfg.cifar_test)?,
            })
        }
    }
}

/// Everything one training run produces.
pub struct RunOutput {
    pub mode: RunMode,
    pub seed: u64,
    pub config_hash: String,
    pub schedule: NoiseSchedule,
    pub t0: usize,
    /// per-client models: pfdm locals, or the independent models in
    /// non-collaborative mode; empty for non-private
    pub locals: Vec<Box<dyn Denoiser>>,
    /// the shared model: pfdm global or the non-private pooled model
    pub global: Option<Box<dyn Denoiser>>,
    pub audit: Vec<AuditEntry>,
    pub local_traces: Vec<Vec<f64>>,
    pub global_trace: Vec<f64>,
    pub manifest: PartitionManifest,
    pub norm_report: NormReport,
    pub privacy: Option<PrivacyReport>,
    pub client_sizes: Vec<usize>,
}

fn with_seed(base: &TrainingConfig, seed: u64) -> TrainingConfig {
    TrainingConfig { seed, ..base.clone() }
}

/// Execute one experiment with `cfg.seed` as the master seed for every
/// stage stream.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunOutput> {
    run_pipeline_with_transport(cfg, &InProcessTransport::new())
}

/// As [`run_pipeline`], sending protocol messages over the given transport
/// (pfdm mode only; the baselines exchange nothing).
pub fn run_pipeline_with_transport(
    cfg: &ExperimentConfig,
    transport: &dyn Transport,
) -> Result<RunOutput> {
    cfg.validate()?;
    let master = cfg.seed;
    let schedule = cfg.schedule.build()?;
    let corpus = load_corpus(&cfg.data)?;

    let policy = NormPolicy {
        mode: if cfg.privacy.clip { NormMode::Clip } else { NormMode::Report },
        sample_bound: None,
        coord_bound: Some(cfg.privacy.coord_bound),
    };
    let (train, norm_report) = apply_norm_policy(&corpus.train, &policy)?;

    let spec = cfg.partition.to_spec(rng::stream(master, "partition").next_u64());
    let (client_batches, manifest) = partition(&train, &spec)?;
    let client_sizes: Vec<usize> = client_batches.iter().map(|b| b.count()).collect();

    let num_labels = Some(cfg.num_labels);
    let privacy = match cfg.mode {
        RunMode::Pfdm => {
            let bound = match cfg.privacy.bound_mode {
                BoundMode::PerCoordinate => {
                    if cfg.privacy.clip { cfg.privacy.coord_bound } else { norm_report.max_abs }
                }
                BoundMode::PerSample => norm_report.max_l2,
            };
            Some(theorem1_epsilon(
                &schedule,
                &PrivacyQuery::new(cfg.t0, bound, cfg.privacy.bound_mode, cfg.privacy.delta),
            )?)
        }
        _ => None,
    };

    let (locals, global, audit, local_traces, global_trace) = match cfg.mode {
        RunMode::Pfdm => {
            let clients: Vec<ClientState> = client_batches
                .into_iter()
                .enumerate()
                .map(|(m, b)| {
                    ClientState::new(
                        m as u32,
                        b,
                        cfg.t0,
                        schedule.clone(),
                        rng::stream(master, &format!("client{m}")).next_u64(),
                    )
                })
                .collect::<Result<_>>()?;
            let fed = FederationConfig {
                local_training: cfg.local_training.clone(),
                global_training: with_seed(
                    &cfg.global_training,
                    rng::stream(master, "global").next_u64(),
                ),
                num_labels,
                release_count: (cfg.release_count > 0).then_some(cfg.release_count),
            };
            let outcome = run_federation(clients, &schedule, &fed, transport)?;
            let locals: Vec<Box<dyn Denoiser>> = outcome
                .clients
                .into_iter()
                .map(|c| c.local_denoiser().expect("trained local").clone_box())
                .collect();
            (
                locals,
                outcome.server.take_global(),
                outcome.audit,
                outcome.local_traces,
                outcome.global_trace,
            )
        }
        RunMode::NonCollaborative => {
            let mut locals = Vec::new();
            let mut traces = Vec::new();
            for (m, b) in client_batches.into_iter().enumerate() {
                let seed = rng::stream(master, &format!("independent{m}")).next_u64();
                let net = build_trainable_denoiser(
                    &with_seed(&cfg.global_training, seed),
                    b.shape(),
                    schedule.len(),
                    num_labels,
                )?;
                let out = train_ddpm(
                    &b,
                    schedule.len(),
                    &schedule,
                    Box::new(net),
                    &with_seed(&cfg.global_training, seed),
                )?;
                locals.push(out.denoiser);
                traces.push(out.loss_trace);
            }
            (locals, None, Vec::new(), traces, Vec::new())
        }
        RunMode::NonPrivate => {
            let pooled = SampleBatch::concat(&client_batches)?;
            let seed = rng::stream(master, "pooled").next_u64();
            let net = build_trainable_denoiser(
                &with_seed(&cfg.global_training, seed),
                pooled.shape(),
                schedule.len(),
                num_labels,
            )?;
            let out = train_ddpm(
                &pooled,
                schedule.len(),
                &schedule,
                Box::new(net),
                &with_seed(&cfg.global_training, seed),
            )?;
            (Vec::new(), Some(out.denoiser), Vec::new(), Vec::new(), out.loss_trace)
        }
    };

    Ok(RunOutput {
        mode: cfg.mode,
        seed: master,
        config_hash: cfg.hash(),
        schedule,
        t0: cfg.t0,
        locals,
        global,
        audit,
        local_traces,
        global_trace,
        manifest,
        norm_report,
        privacy,
        client_sizes,
    })
}

/// Draw conditional samples for one client from a finished run.
pub fn sample_for_client(
    run: &RunOutput,
    client: usize,
    count: usize,
    label: Option<u16>,
    seed: u64,
) -> Result<SampleBatch> {
    match run.mode {
        RunMode::Pfdm => {
            let global = run
                .global
                .as_deref()
                .ok_or_else(|| Error::Protocol("run carries no global model".into()))?;
            let local = run
                .locals
                .get(client)
                .ok_or_else(|| Error::Protocol(format!("no local model for client {client}")))?;
            pfdm_sample(global, local.as_ref(), &run.schedule, run.t0, count, label, seed)
        }
        RunMode::NonCollaborative => {
            let model = run
                .locals
                .get(client)
                .ok_or_else(|| Error::Protocol(format!("no model for client {client}")))?;
            sample_ddpm(model.as_ref(), &run.schedule, run.schedule.len(), count, label, seed)
        }
        RunMode::NonPrivate => {
            let model = run
                .global
                .as_deref()
                .ok_or_else(|| Error::Protocol("run carries no pooled model".into()))?;
            sample_ddpm(model, &run.schedule, run.schedule.len(), count, label, seed)
        }
    }
}

/// Per-class conditional sampling, concatenated with requested labels.
pub fn sample_classes(
    run: &RunOutput,
    client: usize,
    classes: &[u16],
    per_class: usize,
    seed: u64,
) -> Result<SampleBatch> {
    let batches: Vec<SampleBatch> = classes
        .iter()
        .map(|&c| {
            sample_for_client(
                run,
                client,
                per_class,
                Some(c),
                rng::stream(seed, &format!("class{c}")).next_u64(),
            )
        })
        .collect::<Result<_>>()?;
    SampleBatch::concat(&batches)
}
