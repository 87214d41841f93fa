//! `pfdm run`: execute one experiment end to end and leave a stamped
//! artifact directory behind: checkpoints, manifest, audit log, privacy
//! report, sample grids and metrics.
//!
//! In pfdm mode the protocol's transport is selectable: `inproc`
//! (default simulation), `file` (one message per file), or `http`, in
//! which case the train-local and noisify stages run here and the global
//! stage runs on the service; only encoded noisy-dataset messages cross.

use std::path::PathBuf;

use clap::Args;
use rand::RngCore;

use pfdm_client::types::{CreateSessionRequest, SampleRequest, TrainingParams};
use pfdm_core::config::{ExperimentConfig, RunMode};
use pfdm_core::data::partition;
use pfdm_core::denoiser::{
    checkpoint_denoiser, read_checkpoint, Denoiser, OptimizerKind, TimeEmbedKind, TrainingConfig,
};
use pfdm_core::eval::{
    kernel_mmd, per_class_report, save_grid_png, train_classifier, Bandwidth, ClassifierConfig,
};
use pfdm_core::federation::{client_noisify, client_train_local, ClientState, FileTransport, InProcessTransport};
use pfdm_core::pipeline::{load_corpus, run_pipeline_with_transport, sample_classes, RunOutput};
use pfdm_core::rng;

use crate::{service_client, CmdResult, Failure};

#[derive(Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// overrides the config's mode (pfdm | non-collaborative | non-private)
    #[arg(long)]
    pub mode: Option<String>,
    /// overrides the config's master seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// overrides the config's output directory (PFDM_OUT_ROOT also applies)
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// protocol transport in pfdm mode: inproc | file | http
    #[arg(long, default_value = "inproc")]
    pub transport: String,
    /// skip sampling and evaluation, leaving training artifacts only
    #[arg(long)]
    pub train_only: bool,
}

fn parse_mode(s: &str) -> Result<RunMode, Failure> {
    match s {
        "pfdm" => Ok(RunMode::Pfdm),
        "non-collaborative" | "non_collaborative" => Ok(RunMode::NonCollaborative),
        "non-private" | "non_private" => Ok(RunMode::NonPrivate),
        other => Err(Failure::config(format!("unknown mode {other:?}"))),
    }
}

fn training_params(cfg: &TrainingConfig, seed: u64) -> TrainingParams {
    TrainingParams {
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        steps: cfg.steps,
        seed,
        momentum: match cfg.optimizer {
            OptimizerKind::Momentum { momentum } => Some(momentum),
            OptimizerKind::Sgd => None,
        },
        label_conditioning: cfg.label_conditioning,
        time_embed_dim: cfg.time_embed_dim,
        time_embed: match cfg.time_embed {
            TimeEmbedKind::Sinusoidal => "sinusoidal".into(),
            TimeEmbedKind::Learned => "learned".into(),
        },
        hidden: cfg.hidden.clone(),
    }
}

pub async fn run(server: &Option<String>, args: RunArgs) -> CmdResult {
    let mut cfg =
        ExperimentConfig::load(&args.config).map_err(|e| Failure::config(e.to_string()))?;
    if let Some(mode) = &args.mode {
        cfg.mode = parse_mode(mode)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let root = match (&args.out_dir, std::env::var_os("PFDM_OUT_ROOT")) {
        (Some(dir), _) => dir.clone(),
        (None, Some(root)) => PathBuf::from(root).join(&cfg.output_dir),
        (None, None) => cfg.output_dir.clone(),
    };
    let stamp = format!("{}-seed{}-{}", cfg.mode, cfg.seed, cfg.hash());
    let out = root.join(&stamp);
    std::fs::create_dir_all(&out).map_err(|e| Failure::stage(e.to_string()))?;
    println!("run {stamp}");

    // stage: train (locally or over http)
    let output = match (cfg.mode, args.transport.as_str()) {
        (RunMode::Pfdm, "http") => run_over_http(server, &cfg).await?,
        (_, "inproc") | (RunMode::NonCollaborative, _) | (RunMode::NonPrivate, _) => {
            run_pipeline_with_transport(&cfg, &InProcessTransport::new())
                .map_err(|e| Failure::stage(e.to_string()))?
        }
        (RunMode::Pfdm, "file") => {
            let transport = FileTransport::new(out.join("queue"))
                .map_err(|e| Failure::stage(e.to_string()))?;
            run_pipeline_with_transport(&cfg, &transport)
                .map_err(|e| Failure::stage(e.to_string()))?
        }
        (_, other) => return Err(Failure::config(format!("unknown transport {other:?}"))),
    };

    // stage: persist checkpoints and protocol records immediately
    std::fs::write(&out.join("manifest.csv"), output.manifest.to_csv())
        .map_err(|e| Failure::stage(e.to_string()))?;
    for (m, local) in output.locals.iter().enumerate() {
        let blob = checkpoint_denoiser(local.as_ref()).map_err(|e| Failure::stage(e.to_string()))?;
        std::fs::write(out.join(format!("local{m}.pfdc")), blob)
            .map_err(|e| Failure::stage(e.to_string()))?;
    }
    if let Some(global) = &output.global {
        let blob =
            checkpoint_denoiser(global.as_ref()).map_err(|e| Failure::stage(e.to_string()))?;
        std::fs::write(out.join("global.pfdc"), blob).map_err(|e| Failure::stage(e.to_string()))?;
    }
    if !output.audit.is_empty() {
        let audit = serde_json::to_string_pretty(&output.audit).expect("audit serializes");
        std::fs::write(out.join("audit.json"), audit).map_err(|e| Failure::stage(e.to_string()))?;
    }
    if let Some(privacy) = &output.privacy {
        std::fs::write(out.join("privacy.txt"), pfdm_core::privacy::report_text(privacy))
            .map_err(|e| Failure::stage(e.to_string()))?;
        println!(
            "privacy: epsilon = {:.3} at t0 = {} ({})",
            privacy.epsilon, privacy.t0, privacy.mode
        );
    }
    let run_info = serde_json::json!({
        "mode": cfg.mode.to_string(),
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "clients": output.client_sizes,
        "max_l2": output.norm_report.max_l2,
        "max_abs": output.norm_report.max_abs,
    });
    std::fs::write(out.join("run.json"), serde_json::to_string_pretty(&run_info).unwrap())
        .map_err(|e| Failure::stage(e.to_string()))?;
    println!("checkpoints written to {}", out.display());

    if args.train_only {
        return Ok(());
    }

    // stage: sample per client, render grids
    let classes: Vec<u16> = (0..cfg.num_labels).collect();
    let n_clients = if output.locals.is_empty() { 1 } else { output.locals.len() };
    let mut per_client_samples = Vec::new();
    for m in 0..n_clients {
        let samples = sample_classes(
            &output,
            m,
            &classes,
            cfg.eval.samples_per_class,
            rng::stream(cfg.seed, &format!("eval-sample{m}")).next_u64(),
        )
        .map_err(|e| Failure::stage(e.to_string()))?;
        save_grid_png(&out.join(format!("samples-client{m}.png")), &samples, 16)
            .map_err(|e| Failure::stage(e.to_string()))?;
        per_client_samples.push(samples);
    }
    println!("sample grids written");

    // stage: evaluate against the real corpus
    let corpus = load_corpus(&cfg.data).map_err(|e| Failure::stage(e.to_string()))?;
    let reference = train_classifier(
        &corpus.train,
        cfg.num_labels as usize,
        &ClassifierConfig { seed: cfg.eval.reference_seed, ..cfg.eval.classifier.clone() },
    )
    .map_err(|e| Failure::stage(e.to_string()))?;
    let mut metrics = String::from("client,metric,class,value,count\n");
    for (m, samples) in per_client_samples.iter().enumerate() {
        let report =
            per_class_report(samples, &reference).map_err(|e| Failure::stage(e.to_string()))?;
        for (c, v, n) in &report.per_class {
            metrics.push_str(&format!("{m},agreement,{c},{v:.6},{n}\n"));
        }
        metrics.push_str(&format!("{m},agreement,all,{:.6},{}\n", report.aggregate, report.count));
        let (mmd, _) = kernel_mmd(samples, &corpus.test, Bandwidth::Median)
            .map_err(|e| Failure::stage(e.to_string()))?;
        metrics.push_str(&format!("{m},mmd,all,{mmd:.6},{}\n", samples.count()));
        println!("client {m}: agreement {:.3}, mmd {:.5}", report.aggregate, mmd);
    }
    std::fs::write(out.join("metrics.csv"), metrics).map_err(|e| Failure::stage(e.to_string()))?;
    println!("metrics written to {}", out.join("metrics.csv").display());
    Ok(())
}

/// The pfdm protocol with the global stage on the service: local training
/// and noisification stay in this process; only encoded messages and the
/// published global checkpoint cross the wire.
async fn run_over_http(server: &Option<String>, cfg: &ExperimentConfig) -> Result<RunOutput, Failure> {
    let client = service_client(server).await?;
    let master = cfg.seed;
    let schedule = cfg.schedule.build().map_err(|e| Failure::config(e.to_string()))?;
    let corpus = load_corpus(&cfg.data).map_err(|e| Failure::config(e.to_string()))?;
    let policy = pfdm_core::data::NormPolicy {
        mode: if cfg.privacy.clip {
            pfdm_core::data::NormMode::Clip
        } else {
            pfdm_core::data::NormMode::Report
        },
        sample_bound: None,
        coord_bound: Some(cfg.privacy.coord_bound),
    };
    let (train, norm_report) = pfdm_core::data::apply_norm_policy(&corpus.train, &policy)
        .map_err(|e| Failure::stage(e.to_string()))?;
    let spec = cfg.partition.to_spec(rng::stream(master, "partition").next_u64());
    let (client_batches, manifest) =
        partition(&train, &spec).map_err(|e| Failure::config(e.to_string()))?;
    let client_sizes: Vec<usize> = client_batches.iter().map(|b| b.count()).collect();
    let sample_shape = client_batches[0].shape().to_vec();
    let expected: Vec<u32> = (0..client_batches.len() as u32).collect();

    let session = client
        .create_session(&CreateSessionRequest {
            schedule: super::schedule_params(&cfg.schedule),
            expected_clients: expected.clone(),
            t0: cfg.t0,
            sample_shape: sample_shape.clone(),
            training: training_params(
                &cfg.global_training,
                rng::stream(master, "global").next_u64(),
            ),
            num_labels: Some(cfg.num_labels),
        })
        .await
        .map_err(|e| Failure::stage(e.to_string()))?;
    println!("session {} on {}", session.id, client.base_url());

    let mut locals: Vec<Box<dyn Denoiser>> = Vec::new();
    let mut local_traces = Vec::new();
    for (m, batch) in client_batches.into_iter().enumerate() {
        let state = ClientState::new(
            m as u32,
            batch,
            cfg.t0,
            schedule.clone(),
            rng::stream(master, &format!("client{m}")).next_u64(),
        )
        .map_err(|e| Failure::stage(e.to_string()))?;
        let (mut state, trace) =
            client_train_local(state, &cfg.local_training, Some(cfg.num_labels))
                .map_err(|e| Failure::stage(format!("client {m} failed: {e}")))?;
        let n = if cfg.release_count > 0 { cfg.release_count } else { state.dataset_len() };
        let noisify_seed = rng::stream(state.seed, "noisify").next_u64();
        let msg = client_noisify(&mut state, n, noisify_seed)
            .map_err(|e| Failure::stage(format!("client {m} failed: {e}")))?;
        client
            .submit_message(&session.id, msg.encode())
            .await
            .map_err(|e| Failure::stage(e.to_string()))?;
        locals.push(state.local_denoiser().expect("trained local").clone_box());
        local_traces.push(trace);
    }

    let trained = client.train(&session.id).await.map_err(|e| Failure::stage(e.to_string()))?;
    println!(
        "global training: {} steps, loss {:.4} -> {:.4}",
        trained.steps, trained.first_loss, trained.final_loss
    );
    let blob =
        client.global_checkpoint(&session.id).await.map_err(|e| Failure::stage(e.to_string()))?;
    let global = read_checkpoint(&blob).map_err(|e| Failure::stage(e.to_string()))?;
    let audit_dtos = client.audit(&session.id).await.map_err(|e| Failure::stage(e.to_string()))?;
    let audit = audit_dtos
        .into_iter()
        .map(|e| pfdm_core::federation::AuditEntry {
            client_id: e.client_id,
            kind: e.kind,
            sample_count: e.sample_count,
            byte_len: e.byte_len,
            fingerprint_hex: e.fingerprint_hex,
        })
        .collect();

    // smoke the server-side sampling path: one tiny global-stage draw
    let _ = client
        .sample(&session.id, &SampleRequest { count: 1, label: None, seed: 0, t_start: None })
        .await
        .map_err(|e| Failure::stage(e.to_string()))?;

    let privacy = {
        let bound = match cfg.privacy.bound_mode {
            pfdm_core::privacy::BoundMode::PerCoordinate => {
                if cfg.privacy.clip {
                    cfg.privacy.coord_bound
                } else {
                    norm_report.max_abs
                }
            }
            pfdm_core::privacy::BoundMode::PerSample => norm_report.max_l2,
        };
        Some(
            pfdm_core::privacy::theorem1_epsilon(
                &schedule,
                &pfdm_core::privacy::PrivacyQuery::new(
                    cfg.t0,
                    bound,
                    cfg.privacy.bound_mode,
                    cfg.privacy.delta,
                ),
            )
            .map_err(|e| Failure::stage(e.to_string()))?,
        )
    };

    Ok(RunOutput {
        mode: cfg.mode,
        seed: master,
        config_hash: cfg.hash(),
        schedule,
        t0: cfg.t0,
        locals,
        global: Some(Box::new(global)),
        audit,
        local_traces,
        global_trace: Vec::new(),
        manifest,
        norm_report,
        privacy,
        client_sizes,
    })
}
