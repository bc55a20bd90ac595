//! Chat-completion gateway: HTTP transport, content-addressed response cache,
//! replay mode, bounded retries with exponential backoff, and a per-model
//! token-bucket rate limiter.
//!
//! Cache layout: `<cache>/<first two hash chars>/<hash>.json`, where the hash is
//! SHA-256 over the canonical JSON of `(model_ref, messages)`. In replay mode the
//! gateway answers from the cache only and never touches the transport.

use crate::digest::sha256_hex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    Assistant,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::Assistant, content: content.into() }
    }
}

/// Opaque model identity plus sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRef {
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_temperature() -> f64 {
    0.7
}

fn default_max_tokens() -> u32 {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub requests_per_minute: Option<u32>,
    pub max_retries: u32,
    /// First backoff delay; each further retry doubles it.
    pub base_delay_ms: u64,
    pub timeout_secs: u64,
    pub cache_dir: PathBuf,
    pub replay: bool,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            requests_per_minute: Some(60),
            max_retries: 3,
            base_delay_ms: 1000,
            timeout_secs: 120,
            cache_dir: PathBuf::from("cache"),
            replay: false,
        }
    }
}

impl GatewayConfig {
    /// Delays slept before each retry: base, 2·base, 4·base, ...
    pub fn retry_schedule(&self) -> Vec<Duration> {
        (0..self.max_retries)
            .map(|i| Duration::from_millis(self.base_delay_ms.saturating_mul(1 << i.min(20))))
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("cache miss for request {0}")]
    CacheMiss(String),
    #[error("missing credentials: environment variable {0} is not set")]
    MissingCredentials(String),
    #[error("empty message list")]
    EmptyMessages,
    #[error("request failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("malformed chat response: {0}")]
    BadResponse(String),
    #[error("cache i/o at {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

#[derive(Debug, Clone)]
pub struct TransportError {
    pub message: String,
    pub retryable: bool,
}

pub trait Transport: Send + Sync {
    /// POSTs a JSON body and returns the raw response bytes.
    fn post_json(&self, url: &str, api_key: Option<&str>, body: &Value)
        -> Result<Vec<u8>, TransportError>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        HttpTransport { agent: config.into() }
    }
}

impl Transport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &Value,
    ) -> Result<Vec<u8>, TransportError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| TransportError {
            message: e.to_string(),
            retryable: true,
        })?;
        let status = resp.status().as_u16();
        let bytes = resp
            .body_mut()
            .read_to_vec()
            .map_err(|e| TransportError { message: e.to_string(), retryable: true })?;
        if (200..300).contains(&status) {
            Ok(bytes)
        } else {
            Err(TransportError {
                message: format!("HTTP {status}: {}", String::from_utf8_lossy(&bytes)),
                retryable: status == 429 || status >= 500,
            })
        }
    }
}

/// Pulls `choices[0].message.content` out of a chat-completion response body.
pub fn parse_chat_response(bytes: &[u8]) -> Result<String, GatewayError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| GatewayError::BadResponse(e.to_string()))?;
    value
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| GatewayError::BadResponse("no choices[0].message.content".into()))
}

#[derive(Serialize)]
struct CacheKey<'a> {
    model_ref: &'a ModelRef,
    messages: &'a [ChatMessage],
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    model_ref: ModelRef,
    messages: Vec<ChatMessage>,
    response: String,
}

pub fn request_hash(model: &ModelRef, messages: &[ChatMessage]) -> String {
    let bytes = serde_json::to_vec(&CacheKey { model_ref: model, messages })
        .expect("cache key serializes");
    sha256_hex(&bytes)
}

pub fn cache_path(cache_dir: &Path, hash: &str) -> PathBuf {
    cache_dir.join(&hash[..2]).join(format!("{hash}.json"))
}

struct Bucket {
    tokens: f64,
    last: Instant,
}

/// Token bucket per model; capacity and refill are both `requests_per_minute`.
struct RateLimiter {
    per_minute: Option<u32>,
    buckets: Mutex<HashMap<String, Bucket>>,
}

impl RateLimiter {
    fn acquire(&self, model: &str) {
        let Some(rpm) = self.per_minute.filter(|&r| r > 0) else {
            return;
        };
        let capacity = rpm as f64;
        let rate = capacity / 60.0;
        loop {
            let wait = {
                let mut buckets = self.buckets.lock().expect("limiter lock");
                let now = Instant::now();
                let b = buckets.entry(model.to_string()).or_insert(Bucket {
                    tokens: capacity,
                    last: now,
                });
                b.tokens = (b.tokens + now.duration_since(b.last).as_secs_f64() * rate).min(capacity);
                b.last = now;
                if b.tokens >= 1.0 {
                    b.tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - b.tokens) / rate)
            };
            std::thread::sleep(wait);
        }
    }
}

pub struct Gateway {
    config: GatewayConfig,
    transport: Option<Arc<dyn Transport>>,
    api_key: Option<String>,
    limiter: RateLimiter,
    network_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("config", &self.config)
            .field("network_calls", &self.network_calls())
            .finish()
    }
}

impl Gateway {
    /// Live gateway over HTTP, reading the API key from the configured variable.
    /// In replay mode no key and no transport are needed.
    pub fn from_env(config: GatewayConfig) -> Result<Self, GatewayError> {
        if config.replay {
            return Ok(Self::build(config, None, None));
        }
        let key = std::env::var(&config.api_key_env)
            .map_err(|_| GatewayError::MissingCredentials(config.api_key_env.clone()))?;
        let transport = Arc::new(HttpTransport::new(Duration::from_secs(config.timeout_secs)));
        Ok(Self::build(config, Some(transport), Some(key)))
    }

    pub fn with_transport(
        config: GatewayConfig,
        transport: Arc<dyn Transport>,
        api_key: Option<String>,
    ) -> Self {
        Self::build(config, Some(transport), api_key)
    }

    fn build(config: GatewayConfig, transport: Option<Arc<dyn Transport>>, api_key: Option<String>) -> Self {
        Gateway {
            limiter: RateLimiter {
                per_minute: config.requests_per_minute,
                buckets: Mutex::new(HashMap::new()),
            },
            config,
            transport,
            api_key,
            network_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// Number of requests handed to the transport, retries included.
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }

    pub fn chat(&self, model: &ModelRef, messages: &[ChatMessage]) -> Result<String, GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::EmptyMessages);
        }
        let hash = request_hash(model, messages);
        let path = cache_path(&self.config.cache_dir, &hash);
        if let Some(hit) = self.read_cache(&path)? {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }
        let transport = match (&self.transport, self.config.replay) {
            (Some(t), false) => t,
            _ => return Err(GatewayError::CacheMiss(hash)),
        };
        let text = self.send(transport.as_ref(), model, messages)?;
        self.write_cache(&path, CacheEntry {
            key: hash,
            model_ref: model.clone(),
            messages: messages.to_vec(),
            response: text.clone(),
        })?;
        Ok(text)
    }

    fn send(
        &self,
        transport: &dyn Transport,
        model: &ModelRef,
        messages: &[ChatMessage],
    ) -> Result<String, GatewayError> {
        let mut body = json!({
            "model": model.model,
            "messages": messages,
            "temperature": model.temperature,
            "max_tokens": model.max_tokens,
        });
        if let Some(seed) = model.seed {
            body["seed"] = json!(seed);
        }
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let schedule = self.config.retry_schedule();
        let mut attempts = 0;
        loop {
            self.limiter.acquire(&model.model);
            self.network_calls.fetch_add(1, Ordering::SeqCst);
            attempts += 1;
            let err = match transport.post_json(&url, self.api_key.as_deref(), &body) {
                Ok(bytes) => match parse_chat_response(&bytes) {
                    Ok(text) => return Ok(text),
                    Err(e) => TransportError { message: e.to_string(), retryable: true },
                },
                Err(e) => e,
            };
            if !err.retryable {
                return Err(GatewayError::Rejected(err.message));
            }
            match schedule.get(attempts as usize - 1) {
                Some(delay) => {
                    tracing::warn!(attempt = attempts, error = %err.message, "chat request failed, retrying");
                    std::thread::sleep(*delay);
                }
                None => {
                    return Err(GatewayError::Exhausted { attempts, last: err.message });
                }
            }
        }
    }

    fn read_cache(&self, path: &Path) -> Result<Option<String>, GatewayError> {
        match fs::read(path) {
            Ok(bytes) => {
                let entry: CacheEntry = serde_json::from_slice(&bytes).map_err(|e| GatewayError::Cache {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })?;
                Ok(Some(entry.response))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(GatewayError::Cache { path: path.to_path_buf(), message: e.to_string() }),
        }
    }

    fn write_cache(&self, path: &Path, entry: CacheEntry) -> Result<(), GatewayError> {
        let cache_err = |e: std::io::Error| GatewayError::Cache {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(cache_err)?;
        }
        let tmp = crate::jsonl::tmp_path(path);
        let bytes = serde_json::to_vec_pretty(&entry).expect("cache entry serializes");
        fs::write(&tmp, bytes).map_err(cache_err)?;
        fs::rename(&tmp, path).map_err(cache_err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    struct Scripted {
        calls: AtomicUsize,
        failures_before_success: usize,
    }

    impl Transport for Scripted {
        fn post_json(&self, _: &str, _: Option<&str>, body: &Value) -> Result<Vec<u8>, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures_before_success {
                return Err(TransportError { message: "503".into(), retryable: true });
            }
            let last = body["messages"].as_array().unwrap().last().unwrap()["content"].as_str().unwrap();
            Ok(serde_json::to_vec(&json!({
                "choices": [{"message": {"role": "assistant", "content": format!("echo: {last}")}}]
            }))
            .unwrap())
        }
    }

    fn config(dir: &Path) -> GatewayConfig {
        GatewayConfig {
            cache_dir: dir.to_path_buf(),
            base_delay_ms: 0,
            requests_per_minute: None,
            ..GatewayConfig::default()
        }
    }

    fn model() -> ModelRef {
        ModelRef { model: "m".into(), temperature: 0.0, max_tokens: 16, seed: None }
    }

    #[test]
    fn second_identical_request_is_cached() {
        let dir = tempfile::tempdir().unwrap();
        let t = Arc::new(Scripted { calls: AtomicUsize::new(0), failures_before_success: 0 });
        let gw = Gateway::with_transport(config(dir.path()), t.clone(), None);
        let msgs = [ChatMessage::user("hi")];
        assert_eq!(gw.chat(&model(), &msgs).unwrap(), "echo: hi");
        assert_eq!(gw.chat(&model(), &msgs).unwrap(), "echo: hi");
        assert_eq!(gw.network_calls(), 1);
        assert_eq!(gw.cache_hits(), 1);
        let hash = request_hash(&model(), &msgs);
        assert!(cache_path(dir.path(), &hash).exists());
        assert!(cache_path(dir.path(), &hash).parent().unwrap().ends_with(&hash[..2]));
    }

    #[test]
    fn replay_with_empty_cache_misses() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::from_env(GatewayConfig { replay: true, ..config(dir.path()) }).unwrap();
        let err = gw.chat(&model(), &[ChatMessage::user("hi")]).unwrap_err();
        assert!(err.to_string().contains("cache miss"));
        assert_eq!(gw.network_calls(), 0);
    }

    #[test]
    fn retries_then_gives_up() {
        let dir = tempfile::tempdir().unwrap();
        let t = Arc::new(Scripted { calls: AtomicUsize::new(0), failures_before_success: 2 });
        let gw = Gateway::with_transport(config(dir.path()), t, None);
        assert!(gw.chat(&model(), &[ChatMessage::user("x")]).is_ok());
        assert_eq!(gw.network_calls(), 3);

        let t = Arc::new(Scripted { calls: AtomicUsize::new(0), failures_before_success: 10 });
        let gw = Gateway::with_transport(config(dir.path()), t, None);
        match gw.chat(&model(), &[ChatMessage::user("y")]) {
            Err(GatewayError::Exhausted { attempts, .. }) => assert_eq!(attempts, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn default_retry_schedule() {
        let s = GatewayConfig::default().retry_schedule();
        assert_eq!(s, vec![Duration::from_secs(1), Duration::from_secs(2), Duration::from_secs(4)]);
    }

    #[test]
    fn response_parsing() {
        assert_eq!(
            parse_chat_response(br#"{"choices":[{"message":{"content":"ok"}}]}"#).unwrap(),
            "ok"
        );
        assert!(parse_chat_response(b"{}").is_err());
        assert!(parse_chat_response(b"\xff").is_err());
    }
}
