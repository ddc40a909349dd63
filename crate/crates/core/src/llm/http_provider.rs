use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{LlmError, LlmRequest, Provider, ProviderErrorKind};
use crate::http::{endpoint, HttpError, JsonClient};

/// OpenAI-compatible completions client.
///
/// `POST {base_url}/completions` with
/// `{"model", "prompt", "temperature", "max_tokens", "stop", "n"}`; the reply's
/// `choices[].text` are returned ordered by `choices[].index`.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    base_url: String,
    model: String,
    client: JsonClient,
}

#[derive(Serialize)]
struct Body<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
    n: usize,
}

#[derive(Deserialize)]
struct Reply {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    index: Option<usize>,
}

impl HttpProvider {
    pub fn new(
        base_url: impl Into<String>,
        api_key: Option<String>,
        model: impl Into<String>,
        timeout: Duration,
    ) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            client: JsonClient::new(timeout, api_key),
        }
    }

    /// Reads `LLM_BASE_URL`, `LLM_API_KEY` and `LLM_MODEL`.
    pub fn from_env(timeout: Duration) -> Result<Self, LlmError> {
        let base = std::env::var("LLM_BASE_URL")
            .map_err(|_| LlmError::InvalidRequest("LLM_BASE_URL is not set".into()))?;
        let model = std::env::var("LLM_MODEL")
            .map_err(|_| LlmError::InvalidRequest("LLM_MODEL is not set".into()))?;
        Ok(Self::new(base, std::env::var("LLM_API_KEY").ok(), model, timeout))
    }
}

/// Extracts completion texts from a reply body.
pub fn parse_completion_reply(body: &str) -> Result<Vec<String>, LlmError> {
    let reply: Reply =
        serde_json::from_str(body).map_err(|e| LlmError::malformed(e.to_string()))?;
    let mut choices: Vec<(usize, String)> = reply
        .choices
        .into_iter()
        .enumerate()
        .map(|(i, c)| (c.index.unwrap_or(i), c.text))
        .collect();
    choices.sort_by_key(|(i, _)| *i);
    Ok(choices.into_iter().map(|(_, t)| t).collect())
}

impl From<HttpError> for LlmError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Timeout => LlmError::Provider {
                kind: ProviderErrorKind::Timeout,
                status: None,
                message: "request timed out".into(),
            },
            HttpError::Status { status: 429, .. } => LlmError::RateLimited,
            HttpError::Status { status, body } => LlmError::Provider {
                kind: ProviderErrorKind::Http,
                status: Some(status),
                message: body,
            },
            HttpError::Transport(message) => LlmError::Provider {
                kind: ProviderErrorKind::Http,
                status: None,
                message,
            },
            HttpError::Malformed(message) => LlmError::malformed(message),
        }
    }
}

impl Provider for HttpProvider {
    fn name(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &LlmRequest) -> Result<Vec<String>, LlmError> {
        let body = Body {
            model: &self.model,
            prompt: &request.prompt,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            stop: &request.stop,
            n: request.n,
        };
        let value = self.client.post(&endpoint(&self.base_url, "completions"), &body)?;
        let texts = parse_completion_reply(&value.to_string())?;
        if texts.len() != request.n {
            return Err(LlmError::malformed(format!(
                "expected {} choices, got {}",
                request.n,
                texts.len()
            )));
        }
        Ok(texts)
    }
}
