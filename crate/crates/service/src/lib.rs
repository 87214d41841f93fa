//! HTTP service: the protocol's server side plus stateless accountant,
//! sampling and evaluation queries.
//!
//! A federation session collects one noisy-dataset message per configured
//! client over `POST /v1/sessions/:id/messages` (the bit-exact wire bytes
//! as the request body), trains the shared global denoiser on demand, and
//! publishes its checkpoint. Local denoisers never reach the service; the
//! HTTP boundary is the protocol's privacy boundary.

mod sessions;

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::sync::Mutex;

use pfdm_client::types::*;
use pfdm_core::denoiser::checkpoint_denoiser;
use pfdm_core::eval::{kernel_mmd, Bandwidth};
use pfdm_core::federation::NoisyDatasetMessage;
use pfdm_core::privacy::{
    budget_sweep, group_epsilon, min_t0_for_epsilon, sweep_to_csv, theorem1_epsilon, BoundMode,
    PrivacyQuery,
};
use pfdm_core::{Error as CoreError, NoiseSchedule, SampleBatch, SigmaMode};

use sessions::{Session, Sessions};

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<Mutex<Sessions>>,
}

/// Build the service router.
pub fn router() -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/account", post(account))
        .route("/v1/account/solve-t0", post(solve_t0))
        .route("/v1/account/sweep", post(sweep))
        .route("/v1/schedule/table", post(schedule_table))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/:id", get(session_info))
        .route("/v1/sessions/:id/messages", post(submit_message))
        .route("/v1/sessions/:id/train", post(train_session))
        .route("/v1/sessions/:id/global", get(global_checkpoint))
        .route("/v1/sessions/:id/audit", get(session_audit))
        .route("/v1/sessions/:id/sample", post(session_sample))
        .route("/v1/eval/mmd", post(eval_mmd))
        .with_state(AppState::default())
}

/// Serve until the listener closes.
pub async fn serve(listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router()).await
}

/// Bind an ephemeral local port and serve in a background task; returns
/// the bound address. Used by the CLI to self-host.
pub async fn spawn_ephemeral() -> std::io::Result<std::net::SocketAddr> {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    tokio::spawn(async move {
        if let Err(e) = serve(listener).await {
            tracing::error!("ephemeral service stopped: {e}");
        }
    });
    Ok(addr)
}

struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, message: message.into() }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self { status: StatusCode::NOT_FOUND, message: message.into() }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match &e {
            CoreError::Io(_) | CoreError::Diverged { .. } | CoreError::NonFinite(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            CoreError::FingerprintMismatch { .. } | CoreError::Protocol(_) => StatusCode::CONFLICT,
            _ => StatusCode::BAD_REQUEST,
        };
        Self { status, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

fn parse_schedule(p: &ScheduleParams) -> Result<NoiseSchedule, ApiError> {
    let mode = match p.sigma_mode.as_str() {
        "beta" => SigmaMode::Beta,
        "posterior" => SigmaMode::Posterior,
        other => return Err(ApiError::bad_request(format!("unknown sigma mode {other:?}"))),
    };
    Ok(NoiseSchedule::linear(p.t_steps, p.beta_start, p.beta_end, mode)?)
}

fn parse_bound_mode(s: &str) -> Result<BoundMode, ApiError> {
    match s {
        "per_sample" => Ok(BoundMode::PerSample),
        "per_coordinate" => Ok(BoundMode::PerCoordinate),
        other => Err(ApiError::bad_request(format!("unknown bound mode {other:?}"))),
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn account(Json(req): Json<AccountRequest>) -> Result<Json<AccountResponse>, ApiError> {
    let schedule = parse_schedule(&req.schedule)?;
    let mode = parse_bound_mode(&req.mode)?;
    let query =
        PrivacyQuery::new(req.t0, req.bound, mode, req.delta).with_group_size(req.group_size);
    let report = if req.group_size > 1 {
        group_epsilon(&schedule, &query)?
    } else {
        theorem1_epsilon(&schedule, &query)?
    };
    Ok(Json(AccountResponse {
        t0: report.t0,
        alpha_bar_t0: report.alpha_bar_t0,
        bound: report.bound,
        mode: report.mode.to_string(),
        delta: report.delta,
        group_size: report.group_size,
        tau: report.tau,
        gamma_star: report.gamma_star,
        epsilon: report.epsilon,
        epsilon1: report.epsilon1,
        epsilon2: report.epsilon2,
    }))
}

async fn solve_t0(Json(req): Json<SolveT0Request>) -> Result<Json<SolveT0Response>, ApiError> {
    let schedule = parse_schedule(&req.schedule)?;
    let mode = parse_bound_mode(&req.mode)?;
    match min_t0_for_epsilon(req.target_epsilon, req.bound, mode, req.delta, &schedule) {
        Ok(t0) => {
            let eps =
                theorem1_epsilon(&schedule, &PrivacyQuery::new(t0, req.bound, mode, req.delta))?
                    .epsilon;
            Ok(Json(SolveT0Response { reachable: true, t0: Some(t0), epsilon_at_t0: Some(eps) }))
        }
        Err(CoreError::TargetUnreachable { .. }) => {
            Ok(Json(SolveT0Response { reachable: false, t0: None, epsilon_at_t0: None }))
        }
        Err(e) => Err(e.into()),
    }
}

async fn sweep(Json(req): Json<SweepRequest>) -> Result<Response, ApiError> {
    let schedule = parse_schedule(&req.schedule)?;
    let mode = parse_bound_mode(&req.mode)?;
    let rows = budget_sweep(&schedule, req.bound, req.delta, mode)?;
    let csv = sweep_to_csv(&rows);
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}

async fn schedule_table(Json(req): Json<ScheduleParams>) -> Result<Response, ApiError> {
    let schedule = parse_schedule(&req)?;
    Ok(([(header::CONTENT_TYPE, "text/plain")], schedule.to_table()).into_response())
}

async fn create_session(
    State(state): State<AppState>,
    Json(req): Json<CreateSessionRequest>,
) -> Result<Json<SessionInfo>, ApiError> {
    let schedule = parse_schedule(&req.schedule)?;
    if req.t0 == 0 || req.t0 > schedule.len() {
        return Err(ApiError::bad_request(format!("t0 = {} outside the schedule", req.t0)));
    }
    if req.expected_clients.is_empty() {
        return Err(ApiError::bad_request("expected_clients must be non-empty"));
    }
    let session = Session::new(schedule, req)?;
    let mut sessions = state.sessions.lock().await;
    let info = sessions.insert(session);
    Ok(Json(info))
}

async fn session_info(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionInfo>, ApiError> {
    let sessions = state.sessions.lock().await;
    let session = sessions.get(&id).ok_or_else(|| ApiError::not_found("no such session"))?;
    Ok(Json(session.info(&id)))
}

async fn submit_message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<SessionInfo>, ApiError> {
    let msg = NoisyDatasetMessage::decode(&body)
        .map_err(|e| ApiError::bad_request(format!("rejected payload: {e}")))?;
    let mut sessions = state.sessions.lock().await;
    let session = sessions.get_mut(&id).ok_or_else(|| ApiError::not_found("no such session"))?;
    session.receive(msg, body.len())?;
    Ok(Json(session.info(&id)))
}

async fn train_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<TrainResponse>, ApiError> {
    // take the session out so training does not hold the registry lock
    let mut session = {
        let mut sessions = state.sessions.lock().await;
        sessions.take(&id).ok_or_else(|| ApiError::not_found("no such session"))?
    };
    let (session, trained) = tokio::task::spawn_blocking(move || {
        let r = session.train();
        (session, r)
    })
    .await
    .expect("training task panicked");
    let mut sessions = state.sessions.lock().await;
    sessions.put_back(&id, session);
    let trace = trained?;
    Ok(Json(TrainResponse {
        steps: trace.len(),
        first_loss: trace.first().copied().unwrap_or(0.0),
        final_loss: trace.last().copied().unwrap_or(0.0),
    }))
}

async fn global_checkpoint(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let sessions = state.sessions.lock().await;
    let session = sessions.get(&id).ok_or_else(|| ApiError::not_found("no such session"))?;
    let global = session
        .global()
        .ok_or_else(|| ApiError::bad_request("session has no trained global model yet"))?;
    let blob = checkpoint_denoiser(global)?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], blob).into_response())
}

async fn session_audit(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Vec<AuditEntryDto>>, ApiError> {
    let sessions = state.sessions.lock().await;
    let session = sessions.get(&id).ok_or_else(|| ApiError::not_found("no such session"))?;
    Ok(Json(
        session
            .audit()
            .iter()
            .map(|e| AuditEntryDto {
                client_id: e.client_id,
                kind: e.kind.clone(),
                sample_count: e.sample_count,
                byte_len: e.byte_len,
                fingerprint_hex: e.fingerprint_hex.clone(),
            })
            .collect(),
    ))
}

async fn session_sample(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<SampleRequest>,
) -> Result<Json<SamplesResponse>, ApiError> {
    if req.count == 0 || req.count > 100_000 {
        return Err(ApiError::bad_request("count must lie in 1..=100000"));
    }
    let session = {
        let mut sessions = state.sessions.lock().await;
        sessions.take(&id).ok_or_else(|| ApiError::not_found("no such session"))?
    };
    let (session, sampled) = tokio::task::spawn_blocking(move || {
        let r = session.sample(req.count, req.label, req.seed, req.t_start);
        (session, r)
    })
    .await
    .expect("sampling task panicked");
    let mut sessions = state.sessions.lock().await;
    sessions.put_back(&id, session);
    let batch = sampled?;
    let flat: Vec<f32> = batch.data().iter().copied().collect();
    Ok(Json(SamplesResponse {
        count: batch.count(),
        samples: SamplesPayload {
            shape: batch.shape().to_vec(),
            data_b64: encode_f32_b64(&flat),
            labels: batch.labels().map(|l| l.to_vec()),
        },
    }))
}

fn payload_to_batch(p: &SamplesPayload) -> Result<SampleBatch, ApiError> {
    let values = decode_f32_b64(&p.data_b64).map_err(ApiError::bad_request)?;
    let dim: usize = p.shape.iter().product();
    if dim == 0 || values.len() % dim != 0 {
        return Err(ApiError::bad_request("payload length does not match shape"));
    }
    let rows = values.len() / dim;
    let data = ndarray::Array2::from_shape_vec((rows, dim), values)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(SampleBatch::new(data, p.shape.clone(), p.labels.clone(), None)?)
}

async fn eval_mmd(Json(req): Json<MmdRequest>) -> Result<Json<MmdResponse>, ApiError> {
    let a = payload_to_batch(&req.a)?;
    let b = payload_to_batch(&req.b)?;
    let bandwidth = match req.bandwidth {
        Some(h) => Bandwidth::Fixed(h),
        None => Bandwidth::Median,
    };
    let (mmd2, h) = tokio::task::spawn_blocking(move || kernel_mmd(&a, &b, bandwidth))
        .await
        .expect("mmd task panicked")?;
    Ok(Json(MmdResponse { mmd2, bandwidth: h }))
}
