//! Prompt rendering and a provider-agnostic completion gateway.

mod http_provider;
mod mock;
mod prompts;

pub use http_provider::{parse_completion_reply, HttpProvider};
pub use mock::MockProvider;
pub use prompts::{
    parse_question_completion, parse_sql_completion, render_fusion_prompt,
    render_question_prompt, render_scratch_sql_prompt, render_text2sql_prompt, Rendered, Shot,
    DEMO_SHOTS,
};

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TEMPERATURE: f64 = 0.3;
pub const DEFAULT_MAX_TOKENS: u32 = 256;
pub const DEFAULT_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop: Vec<String>,
    pub n: usize,
}

impl LlmRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            stop: Vec::new(),
            n: 1,
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_stop(mut self, stop: &[&str]) -> Self {
        self.stop = stop.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.n == 0 {
            return Err(LlmError::InvalidRequest("n must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} must be finite and non-negative",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderErrorKind {
    Timeout,
    Http,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("provider {kind:?} error: {message}")]
    Provider {
        kind: ProviderErrorKind,
        status: Option<u16>,
        message: String,
    },
    #[error("rate limited")]
    RateLimited,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl LlmError {
    pub fn malformed(message: impl Into<String>) -> Self {
        LlmError::Provider {
            kind: ProviderErrorKind::Malformed,
            status: None,
            message: message.into(),
        }
    }

    /// Timeouts, rate limits, server errors and transport failures.
    pub fn is_transient(&self) -> bool {
        match self {
            LlmError::RateLimited => true,
            LlmError::Provider { kind, status, .. } => match kind {
                ProviderErrorKind::Timeout => true,
                ProviderErrorKind::Http => status.is_none_or(|s| s >= 500),
                ProviderErrorKind::Malformed => false,
            },
            LlmError::InvalidRequest(_) => false,
        }
    }
}

/// A completion backend. `complete` returns exactly `request.n` texts.
pub trait Provider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &LlmRequest) -> Result<Vec<String>, LlmError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base_delay
            .saturating_mul(2u32.saturating_pow(attempt))
            .min(self.max_delay)
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Shared entry point for completions: bounds concurrency, validates
/// requests and replies, and retries transient failures with exponential
/// backoff. Safe to use from many threads at once.
pub struct Gateway {
    provider: Arc<dyn Provider>,
    retry: RetryPolicy,
    permits: Permits,
    limit: usize,
    calls: AtomicUsize,
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>) -> Self {
        Self::with_limit(provider, DEFAULT_IN_FLIGHT)
    }

    pub fn with_limit(provider: Arc<dyn Provider>, limit: usize) -> Self {
        let limit = limit.max(1);
        Self {
            provider,
            retry: RetryPolicy::default(),
            permits: Permits {
                free: Mutex::new(limit),
                cv: Condvar::new(),
            },
            limit,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    /// Provider calls made so far, retries included.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn complete(&self, request: &LlmRequest) -> Result<Vec<String>, LlmError> {
        request.validate()?;
        let mut attempt = 0;
        loop {
            let result = {
                let _permit = self.permits.acquire();
                self.calls.fetch_add(1, Ordering::Relaxed);
                self.provider.complete(request)
            };
            let result = result.and_then(|texts| {
                if texts.len() == request.n {
                    Ok(texts)
                } else {
                    Err(LlmError::malformed(format!(
                        "expected {} completions, got {}",
                        request.n,
                        texts.len()
                    )))
                }
            });
            match result {
                Err(e) if e.is_transient() && attempt < self.retry.max_retries => {
                    let wait = self.retry.delay(attempt);
                    log::warn!("{}: {e}; retrying in {wait:?}", self.provider.name());
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast() -> RetryPolicy {
        RetryPolicy {
            max_retries: 2,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(4),
        }
    }

    #[test]
    fn request_defaults_and_validation() {
        let r = LlmRequest::new("p");
        assert_eq!(r.temperature, 0.3);
        assert_eq!(r.n, 1);
        assert!(r.clone().with_n(0).validate().is_err());
        assert!(r.clone().with_temperature(-1.0).validate().is_err());
        assert!(r.validate().is_ok());
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0), Duration::from_millis(250));
        assert_eq!(p.delay(2), Duration::from_secs(1));
        assert_eq!(p.delay(10), Duration::from_secs(8));
    }

    #[test]
    fn retries_transient_then_succeeds() {
        let mock = MockProvider::new(0).with_script(vec![
            Err(LlmError::RateLimited),
            Err(LlmError::Provider {
                kind: ProviderErrorKind::Timeout,
                status: None,
                message: "slow".into(),
            }),
            Ok(vec!["ok".into()]),
        ]);
        let gw = Gateway::new(Arc::new(mock)).retry_policy(fast());
        assert_eq!(gw.complete(&LlmRequest::new("x")).unwrap(), vec!["ok"]);
        assert_eq!(gw.calls(), 3);
    }

    #[test]
    fn gives_up_after_limit_and_skips_permanent() {
        let mock = MockProvider::new(0).with_script(vec![Err(LlmError::RateLimited); 5]);
        let gw = Gateway::new(Arc::new(mock)).retry_policy(fast());
        assert_eq!(gw.complete(&LlmRequest::new("x")), Err(LlmError::RateLimited));
        assert_eq!(gw.calls(), 3);

        let mock = MockProvider::new(0).with_script(vec![Err(LlmError::malformed("bad"))]);
        let gw = Gateway::new(Arc::new(mock)).retry_policy(fast());
        assert!(matches!(
            gw.complete(&LlmRequest::new("x")),
            Err(LlmError::Provider { kind: ProviderErrorKind::Malformed, .. })
        ));
        assert_eq!(gw.calls(), 1);
    }

    #[test]
    fn wrong_count_is_malformed() {
        let mock = MockProvider::new(0).with_script(vec![Ok(vec!["a".into(), "b".into()])]);
        let gw = Gateway::new(Arc::new(mock)).retry_policy(fast());
        assert!(matches!(
            gw.complete(&LlmRequest::new("x")),
            Err(LlmError::Provider { kind: ProviderErrorKind::Malformed, .. })
        ));
    }

    struct Slow {
        active: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Provider for Slow {
        fn name(&self) -> &str {
            "slow"
        }
        fn complete(&self, r: &LlmRequest) -> Result<Vec<String>, LlmError> {
            let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(20));
            self.active.fetch_sub(1, Ordering::SeqCst);
            Ok(vec![String::new(); r.n])
        }
    }

    #[test]
    fn in_flight_limit_holds() {
        let slow = Arc::new(Slow {
            active: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let gw = Arc::new(Gateway::with_limit(slow.clone(), 2));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let gw = gw.clone();
                std::thread::spawn(move || gw.complete(&LlmRequest::new("p").with_n(3)).unwrap())
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap().len(), 3);
        }
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
    }
}
