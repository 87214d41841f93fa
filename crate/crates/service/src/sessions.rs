//! Federation session registry: the server-side protocol state plus the
//! audit log of everything that crossed the boundary.

use std::collections::HashMap;

use pfdm_client::types::{CreateSessionRequest, SessionInfo, TrainingParams};
use pfdm_core::denoiser::{Denoiser, OptimizerKind, TimeEmbedKind, TrainingConfig};
use pfdm_core::diffusion::sample_ddpm;
use pfdm_core::error::{Error, Result};
use pfdm_core::federation::{AuditEntry, NoisyDatasetMessage, ServerState};
use pfdm_core::{NoiseSchedule, SampleBatch};

pub(crate) fn training_config(p: &TrainingParams) -> Result<TrainingConfig> {
    let cfg = TrainingConfig {
        learning_rate: p.learning_rate,
        batch_size: p.batch_size,
        steps: p.steps,
        seed: p.seed,
        optimizer: match p.momentum {
            Some(m) => OptimizerKind::Momentum { momentum: m },
            None => OptimizerKind::Sgd,
        },
        label_conditioning: p.label_conditioning,
        time_embed_dim: p.time_embed_dim,
        time_embed: match p.time_embed.as_str() {
            "sinusoidal" => TimeEmbedKind::Sinusoidal,
            "learned" => TimeEmbedKind::Learned,
            other => return Err(Error::Config(format!("unknown time embed {other:?}"))),
        },
        hidden: p.hidden.clone(),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub(crate) struct Session {
    server: ServerState,
    schedule: NoiseSchedule,
    t0: usize,
    expected: Vec<u32>,
    training: TrainingConfig,
    num_labels: Option<u16>,
    audit: Vec<AuditEntry>,
    trained: bool,
}

impl Session {
    pub fn new(schedule: NoiseSchedule, req: CreateSessionRequest) -> Result<Self> {
        let training = training_config(&req.training)?;
        if req.sample_shape.is_empty() || req.sample_shape.iter().product::<usize>() == 0 {
            return Err(Error::Config("sample_shape must be non-empty".into()));
        }
        Ok(Self {
            server: ServerState::new(
                schedule.clone(),
                req.expected_clients.clone(),
                req.sample_shape,
            ),
            schedule,
            t0: req.t0,
            expected: req.expected_clients,
            training,
            num_labels: req.num_labels,
            audit: Vec::new(),
            trained: false,
        })
    }

    pub fn info(&self, id: &str) -> SessionInfo {
        SessionInfo {
            id: id.to_string(),
            expected: self.expected.clone(),
            received: self.server.received_clients(),
            trained: self.trained,
            t0: self.t0,
        }
    }

    pub fn receive(&mut self, msg: NoisyDatasetMessage, byte_len: usize) -> Result<()> {
        if msg.t0 as usize != self.t0 {
            return Err(Error::Protocol(format!(
                "message released at t0={} but the session expects t0={}",
                msg.t0, self.t0
            )));
        }
        let entry = AuditEntry {
            client_id: msg.client_id,
            kind: "noisy_dataset".to_string(),
            sample_count: msg.sample_count(),
            byte_len,
            fingerprint_hex: msg.schedule_fingerprint.iter().map(|b| format!("{b:02x}")).collect(),
        };
        self.server.receive(msg)?;
        self.audit.push(entry);
        Ok(())
    }

    pub fn train(&mut self) -> Result<Vec<f64>> {
        let trace =
            pfdm_core::federation::server_train_global(&mut self.server, &self.training, self.num_labels)?;
        self.trained = true;
        Ok(trace)
    }

    pub fn global(&self) -> Option<&dyn Denoiser> {
        self.server.global_denoiser()
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn sample(
        &self,
        count: usize,
        label: Option<u16>,
        seed: u64,
        t_start: Option<usize>,
    ) -> Result<SampleBatch> {
        let global = self
            .global()
            .ok_or_else(|| Error::Protocol("session has no trained global model yet".into()))?;
        let t_start = t_start.unwrap_or(self.schedule.len());
        sample_ddpm(global, &self.schedule, t_start, count, label, seed)
    }
}

#[derive(Default)]
pub(crate) struct Sessions {
    next_id: u64,
    map: HashMap<String, Session>,
}

impl Sessions {
    pub fn insert(&mut self, session: Session) -> SessionInfo {
        self.next_id += 1;
        let id = format!("s{:06}", self.next_id);
        let info = session.info(&id);
        self.map.insert(id, session);
        info
    }

    pub fn get(&self, id: &str) -> Option<&Session> {
        self.map.get(id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut Session> {
        self.map.get_mut(id)
    }

    /// Remove for long-running work outside the registry lock.
    pub fn take(&mut self, id: &str) -> Option<Session> {
        self.map.remove(id)
    }

    pub fn put_back(&mut self, id: &str, session: Session) {
        self.map.insert(id.to_string(), session);
    }
}
