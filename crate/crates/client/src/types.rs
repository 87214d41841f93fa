//! Request/response DTOs shared by the service and its clients.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// "beta" or "posterior"
    #[serde(default = "default_sigma_mode")]
    pub sigma_mode: String,
}

fn default_sigma_mode() -> String {
    "beta".to_string()
}

impl ScheduleParams {
    pub fn standard() -> Self {
        Self { t_steps: 1000, beta_start: 1e-4, beta_end: 0.02, sigma_mode: "beta".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountRequest {
    pub schedule: ScheduleParams,
    pub t0: usize,
    pub bound: f64,
    /// "per_sample" or "per_coordinate"
    pub mode: String,
    pub delta: f64,
    #[serde(default = "one")]
    pub group_size: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountResponse {
    pub t0: usize,
    pub alpha_bar_t0: f64,
    pub bound: f64,
    pub mode: String,
    pub delta: f64,
    pub group_size: u32,
    pub tau: f64,
    pub gamma_star: Option<f64>,
    pub epsilon: f64,
    pub epsilon1: f64,
    pub epsilon2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveT0Request {
    pub schedule: ScheduleParams,
    pub target_epsilon: f64,
    pub bound: f64,
    pub mode: String,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveT0Response {
    pub reachable: bool,
    pub t0: Option<usize>,
    pub epsilon_at_t0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRequest {
    pub schedule: ScheduleParams,
    pub bound: f64,
    pub mode: String,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// momentum coefficient; plain SGD when absent
    pub momentum: Option<f64>,
    pub label_conditioning: bool,
    pub time_embed_dim: usize,
    /// "sinusoidal" or "learned"
    pub time_embed: String,
    pub hidden: Vec<usize>,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            steps: 2000,
            seed: 0,
            momentum: Some(0.9),
            label_conditioning: false,
            time_embed_dim: 16,
            time_embed: "sinusoidal".into(),
            hidden: vec![128, 128],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub schedule: ScheduleParams,
    pub expected_clients: Vec<u32>,
    pub t0: usize,
    pub sample_shape: Vec<usize>,
    pub training: TrainingParams,
    pub num_labels: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub expected: Vec<u32>,
    pub received: Vec<u32>,
    pub trained: bool,
    pub t0: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResponse {
    pub steps: usize,
    pub first_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRequest {
    pub count: usize,
    pub label: Option<u16>,
    pub seed: u64,
    /// defaults to the schedule length
    pub t_start: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesPayload {
    pub shape: Vec<usize>,
    /// row-major little-endian f32, base64
    pub data_b64: String,
    pub labels: Option<Vec<u16>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesResponse {
    pub count: usize,
    pub samples: SamplesPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdRequest {
    pub a: SamplesPayload,
    pub b: SamplesPayload,
    /// RBF bandwidth; median heuristic when absent
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdResponse {
    pub mmd2: f64,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntryDto {
    pub client_id: u32,
    pub kind: String,
    pub sample_count: usize,
    pub byte_len: usize,
    pub fingerprint_hex: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

/// Encode a flat f32 buffer as base64 of its little-endian bytes.
pub fn encode_f32_b64(values: &[f32]) -> String {
    use base64::Engine;
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn decode_f32_b64(text: &str) -> Result<Vec<f32>, String> {
    use base64::Engine;
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(text)
        .map_err(|e| format!("bad base64: {e}"))?;
    if bytes.len() % 4 != 0 {
        return Err("payload length is not a multiple of 4".into());
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
