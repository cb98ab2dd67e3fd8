//! Uniform client for chat, embedding and token-logprob calls.
//!
//! A [`Gateway`] wraps a [`Backend`] (HTTP or the in-process mock) with
//! bounded concurrency and retry with exponential backoff.

mod http;
pub mod mock;

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use factdial_core::TemplateName;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use http::HttpBackend;
pub use mock::{MockBackend, MockRule, MockScript};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub base_url: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub model: String,
    /// Defaults to `model` when unset.
    pub embedding_model: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// First backoff delay; doubles on every retry.
    pub retry_base_ms: u64,
    pub parallelism: usize,
    /// Seeds the retry jitter.
    pub seed: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            base_url: "http://127.0.0.1:8089/v1".into(),
            api_key_env: "FACTDIAL_API_KEY".into(),
            model: "default".into(),
            embedding_model: None,
            temperature: 0.0,
            max_tokens: 512,
            timeout_secs: 60.0,
            max_retries: 2,
            retry_base_ms: 500,
            parallelism: 4,
            seed: 0,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.parallelism == 0 {
            return Err("gateway.parallelism must be >= 1".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err("gateway.temperature must be >= 0".into());
        }
        if self.max_tokens == 0 {
            return Err("gateway.max_tokens must be >= 1".into());
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err("gateway.timeout_secs must be > 0".into());
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn embedding_model(&self) -> &str {
        self.embedding_model.as_deref().unwrap_or(&self.model)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("request timed out")]
    Timeout,
    #[error("backend returned HTTP {0}")]
    HttpStatus(u16),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend does not support {0}")]
    Unsupported(&'static str),
    #[error("precondition violated: {0}")]
    Precondition(&'static str),
}

impl GatewayError {
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Timeout | GatewayError::Transport(_) => true,
            GatewayError::HttpStatus(code) => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message { role: "user".into(), content: content.into() }
    }
}

/// A chat call. `key` identifies the dialogue the call is about and travels
/// as the request's `user` field.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub key: Option<String>,
}

impl ChatRequest {
    pub fn prompt(content: impl Into<String>, key: Option<&str>) -> Self {
        ChatRequest { messages: vec![Message::user(content)], key: key.map(String::from) }
    }

    /// Content of the final user message.
    pub fn last_user_content(&self) -> &str {
        self.messages.iter().rev().find(|m| m.role == "user").map_or("", |m| m.content.as_str())
    }

    pub fn template(&self) -> Option<TemplateName> {
        TemplateName::detect(self.last_user_content())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResult {
    pub text: String,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
}

/// A single attempt against some model server. Retries live in [`Gateway`].
pub trait Backend: Send + Sync {
    fn chat(&self, cfg: &GatewayConfig, req: &ChatRequest) -> Result<ChatResult, GatewayError>;
    fn embed(&self, cfg: &GatewayConfig, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;
    fn logprobs(&self, cfg: &GatewayConfig, text: &str) -> Result<Vec<TokenLogprob>, GatewayError>;
    /// Cheap reachability check made before a batch run.
    fn probe(&self, _cfg: &GatewayConfig) -> Result<(), GatewayError> {
        Ok(())
    }
}

/// Caps the number of in-flight requests.
struct Limiter {
    in_flight: Mutex<usize>,
    freed: Condvar,
    capacity: usize,
}

impl Limiter {
    fn acquire(&self) -> LimiterPermit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.capacity {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        LimiterPermit(self)
    }
}

struct LimiterPermit<'a>(&'a Limiter);

impl Drop for LimiterPermit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Clone)]
pub struct Gateway {
    cfg: GatewayConfig,
    backend: Arc<dyn Backend>,
    limiter: Arc<Limiter>,
    jitter: Arc<Mutex<ChaCha8Rng>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(cfg: GatewayConfig, backend: Arc<dyn Backend>) -> Self {
        let capacity = cfg.parallelism.max(1);
        let jitter = ChaCha8Rng::seed_from_u64(cfg.seed);
        Gateway {
            cfg,
            backend,
            limiter: Arc::new(Limiter { in_flight: Mutex::new(0), freed: Condvar::new(), capacity }),
            jitter: Arc::new(Mutex::new(jitter)),
        }
    }

    pub fn http(cfg: GatewayConfig) -> Self {
        let backend = Arc::new(HttpBackend::new(&cfg));
        Gateway::new(cfg, backend)
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    pub fn probe(&self) -> Result<(), GatewayError> {
        self.backend.probe(&self.cfg)
    }

    fn backoff(&self, retry: u32) -> Duration {
        let base = self.cfg.retry_base_ms as f64 * 2f64.powi(retry as i32);
        let factor = 1.0 + self.jitter.lock().unwrap_or_else(|e| e.into_inner()).random_range(0.0..0.25);
        Duration::from_secs_f64(base * factor / 1000.0)
    }

    /// Runs `op` up to `max_retries + 1` times while it fails transiently.
    fn with_retries<T>(&self, mut op: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let mut retry = 0;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                op()
            };
            match result {
                Err(e) if e.is_transient() && retry < self.cfg.max_retries => {
                    let delay = self.backoff(retry);
                    log::debug!("transient gateway failure ({e}); retry {} in {delay:?}", retry + 1);
                    std::thread::sleep(delay);
                    retry += 1;
                }
                other => return other,
            }
        }
    }

    pub fn chat(&self, req: &ChatRequest) -> Result<ChatResult, GatewayError> {
        if req.messages.is_empty() {
            return Err(GatewayError::Precondition("messages must be non-empty"));
        }
        self.with_retries(|| self.backend.chat(&self.cfg, req))
    }

    /// Sends `prompt` as a single user message and returns the reply text.
    pub fn complete(&self, prompt: &str, key: Option<&str>) -> Result<String, GatewayError> {
        self.chat(&ChatRequest::prompt(prompt, key)).map(|r| r.text)
    }

    /// One vector per input, all of the same dimension.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::Precondition("texts must be non-empty"));
        }
        let vectors = self.with_retries(|| self.backend.embed(&self.cfg, texts))?;
        if vectors.len() != texts.len() {
            return Err(GatewayError::MalformedResponse(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                vectors.len()
            )));
        }
        let dim = vectors[0].len();
        if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
            return Err(GatewayError::MalformedResponse("embedding dimensions differ".into()));
        }
        Ok(vectors)
    }

    pub fn logprobs(&self, text: &str) -> Result<Vec<TokenLogprob>, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::Precondition("text must be non-empty"));
        }
        self.with_retries(|| self.backend.logprobs(&self.cfg, text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Failing {
        calls: AtomicUsize,
        error: GatewayError,
        dims: Vec<usize>,
    }

    impl Backend for Failing {
        fn chat(&self, _: &GatewayConfig, _: &ChatRequest) -> Result<ChatResult, GatewayError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Err(self.error.clone())
        }
        fn embed(&self, _: &GatewayConfig, _: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
            Ok(self.dims.iter().map(|&d| vec![1.0; d]).collect())
        }
        fn logprobs(&self, _: &GatewayConfig, _: &str) -> Result<Vec<TokenLogprob>, GatewayError> {
            Err(GatewayError::Unsupported("logprobs"))
        }
    }

    fn gateway(error: GatewayError, dims: Vec<usize>, max_retries: u32) -> (Gateway, Arc<Failing>) {
        let backend = Arc::new(Failing { calls: AtomicUsize::new(0), error, dims });
        let cfg = GatewayConfig { max_retries, retry_base_ms: 1, ..GatewayConfig::default() };
        (Gateway::new(cfg, backend.clone()), backend)
    }

    #[test]
    fn retries_exhaust_on_server_errors() {
        let (gw, b) = gateway(GatewayError::HttpStatus(500), vec![], 2);
        assert_eq!(gw.complete("hi", None), Err(GatewayError::HttpStatus(500)));
        assert_eq!(b.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (gw, b) = gateway(GatewayError::HttpStatus(400), vec![], 5);
        assert_eq!(gw.complete("hi", None), Err(GatewayError::HttpStatus(400)));
        assert_eq!(b.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn preconditions() {
        let (gw, b) = gateway(GatewayError::Timeout, vec![], 0);
        let empty = ChatRequest { messages: vec![], key: None };
        assert!(matches!(gw.chat(&empty), Err(GatewayError::Precondition(_))));
        assert_eq!(b.calls.load(Ordering::SeqCst), 0);
        assert!(matches!(gw.embed(&[]), Err(GatewayError::Precondition(_))));
        assert!(matches!(gw.logprobs(" "), Err(GatewayError::Precondition(_))));
        assert_eq!(gw.logprobs("x"), Err(GatewayError::Unsupported("logprobs")));
    }

    #[test]
    fn embedding_shape_checked() {
        let (gw, _) = gateway(GatewayError::Timeout, vec![3, 4], 0);
        let texts = vec!["a".to_string(), "b".to_string()];
        assert!(matches!(gw.embed(&texts), Err(GatewayError::MalformedResponse(_))));
        let (gw, _) = gateway(GatewayError::Timeout, vec![3], 0);
        assert!(matches!(gw.embed(&texts), Err(GatewayError::MalformedResponse(_))));
    }

    #[test]
    fn backoff_grows_and_is_seeded() {
        let (gw, _) = gateway(GatewayError::Timeout, vec![], 0);
        let cfg = GatewayConfig { retry_base_ms: 500, ..gw.config().clone() };
        let a = Gateway::new(cfg.clone(), Arc::new(MockBackend::default()));
        let b = Gateway::new(cfg, Arc::new(MockBackend::default()));
        let da: Vec<Duration> = (0..3).map(|r| a.backoff(r)).collect();
        let db: Vec<Duration> = (0..3).map(|r| b.backoff(r)).collect();
        assert_eq!(da, db);
        assert!(da[0] >= Duration::from_millis(500) && da[0] < Duration::from_millis(625));
        assert!(da[1] >= Duration::from_millis(1000) && da[2] >= Duration::from_millis(2000));
    }
}
