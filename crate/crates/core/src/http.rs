//! Minimal JSON-over-HTTP client shared by the embedding and LLM services.

use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("request timed out")]
    Timeout,
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone)]
pub(crate) struct JsonClient {
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl JsonClient {
    pub fn new(timeout: Duration, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, api_key }
    }

    pub fn post<B: Serialize>(&self, url: &str, body: &B) -> Result<serde_json::Value, HttpError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let payload = serde_json::to_vec(body).map_err(|e| HttpError::Malformed(e.to_string()))?;
        let mut resp = req.send(&payload[..]).map_err(map_err)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(map_err)?;
        if !(200..300).contains(&status) {
            let mut body = text;
            body.truncate(512);
            return Err(HttpError::Status { status, body });
        }
        serde_json::from_str(&text).map_err(|e| HttpError::Malformed(e.to_string()))
    }
}

fn map_err(e: ureq::Error) -> HttpError {
    match e {
        ureq::Error::Timeout(_) => HttpError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => HttpError::Timeout,
        other => HttpError::Transport(other.to_string()),
    }
}

/// `base` with one trailing slash removed, joined to `path`.
pub(crate) fn endpoint(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path)
}
