//! Thin typed client for the pfdm service.
//!
//! Carries no model or math code: JSON DTOs in [`types`], binary protocol
//! messages and checkpoints as opaque byte blobs.

pub mod types;

use thiserror::Error;
use types::*;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("service error ({status}): {message}")]
    Api { status: u16, message: String },
}

pub type Result<T, E = ClientError> = std::result::Result<T, E>;

pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        let mut base = base_url.into();
        while base.ends_with('/') {
            base.pop();
        }
        Self { base, http: reqwest::Client::new() }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn check(resp: reqwest::Response) -> Result<reqwest::Response> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let message = match resp.json::<ErrorBody>().await {
            Ok(body) => body.error,
            Err(_) => status.canonical_reason().unwrap_or("request failed").to_string(),
        };
        Err(ClientError::Api { status: status.as_u16(), message })
    }

    async fn post_json<Req: serde::Serialize, Resp: serde::de::DeserializeOwned>(
        &self,
        path: &str,
        req: &Req,
    ) -> Result<Resp> {
        let resp = self.http.post(format!("{}{path}", self.base)).json(req).send().await?;
        Ok(Self::check(resp).await?.json().await?)
    }

    async fn post_json_text<Req: serde::Serialize>(&self, path: &str, req: &Req) -> Result<String> {
        let resp = self.http.post(format!("{}{path}", self.base)).json(req).send().await?;
        Ok(Self::check(resp).await?.text().await?)
    }

    pub async fn health(&self) -> Result<()> {
        let resp = self.http.get(format!("{}/health", self.base)).send().await?;
        Self::check(resp).await.map(|_| ())
    }

    pub async fn account(&self, req: &AccountRequest) -> Result<AccountResponse> {
        self.post_json("/v1/account", req).await
    }

    pub async fn solve_t0(&self, req: &SolveT0Request) -> Result<SolveT0Response> {
        self.post_json("/v1/account/solve-t0", req).await
    }

    pub async fn sweep_csv(&self, req: &SweepRequest) -> Result<String> {
        self.post_json_text("/v1/account/sweep", req).await
    }

    pub async fn schedule_table(&self, schedule: &ScheduleParams) -> Result<String> {
        self.post_json_text("/v1/schedule/table", schedule).await
    }

    pub async fn create_session(&self, req: &CreateSessionRequest) -> Result<SessionInfo> {
        self.post_json("/v1/sessions", req).await
    }

    pub async fn session(&self, id: &str) -> Result<SessionInfo> {
        let resp = self.http.get(format!("{}/v1/sessions/{id}", self.base)).send().await?;
        Ok(Self::check(resp).await?.json().await?)
    }

    /// Submit one encoded protocol message (the bit-exact wire bytes).
    pub async fn submit_message(&self, id: &str, message_bytes: Vec<u8>) -> Result<SessionInfo> {
        let resp = self
            .http
            .post(format!("{}/v1/sessions/{id}/messages", self.base))
            .header("content-type", "application/octet-stream")
            .body(message_bytes)
            .send()
            .await?;
        Ok(Self::check(resp).await?.json().await?)
    }

    pub async fn train(&self, id: &str) -> Result<TrainResponse> {
        let resp = self.http.post(format!("{}/v1/sessions/{id}/train", self.base)).send().await?;
        Ok(Self::check(resp).await?.json().await?)
    }

    /// Download the published global checkpoint blob.
    pub async fn global_checkpoint(&self, id: &str) -> Result<Vec<u8>> {
        let resp = self.http.get(format!("{}/v1/sessions/{id}/global", self.base)).send().await?;
        Ok(Self::check(resp).await?.bytes().await?.to_vec())
    }

    pub async fn audit(&self, id: &str) -> Result<Vec<AuditEntryDto>> {
        let resp = self.http.get(format!("{}/v1/sessions/{id}/audit", self.base)).send().await?;
        Ok(Self::check(resp).await?.json().await?)
    }

    /// Global-stage sampling on the server; the personal stage stays
    /// client-side with the secret local model.
    pub async fn sample(&self, id: &str, req: &SampleRequest) -> Result<SamplesResponse> {
        self.post_json(&format!("/v1/sessions/{id}/sample"), req).await
    }

    pub async fn mmd(&self, req: &MmdRequest) -> Result<MmdResponse> {
        self.post_json("/v1/eval/mmd", req).await
    }
}
