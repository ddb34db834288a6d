//! A single chat-completion interface over interchangeable backends:
//! a live OpenAI-compatible HTTP client, a content-addressed response
//! cache for record/replay, and a deterministic oracle for offline runs.

mod cache;
mod http;
mod oracle;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CacheIndexEntry, CacheMode, CachedBackend, ResponseCache};
pub use http::{HttpBackend, HttpConfig, DEFAULT_API_KEY_ENV};
pub use oracle::{oracle_respond, GroundTruth, OracleBackend, OracleFidelity, ReflectionBehavior, PREDICTION_MARKER};

pub const DEFAULT_MODEL: &str = "gpt-4o-2024-05-13";
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_TOP_P: f64 = 0.3;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("gateway configuration: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("no recorded response for request {key}")]
    ReplayMiss { key: String },
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("cache: {0}")]
    Cache(String),
}

impl GatewayError {
    /// Errors that make every later request fail the same way, so a run
    /// should stop rather than record per-window failures.
    pub fn is_fatal(&self) -> bool {
        match self {
            GatewayError::Config(_) | GatewayError::ReplayMiss { .. } | GatewayError::Cache(_) => true,
            GatewayError::Http { status, .. } => matches!(status, 401 | 403 | 404),
            _ => false,
        }
    }
}

/// Sampling parameters shared by every request of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatParams {
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub force_structured_output: bool,
}

impl Default for ChatParams {
    fn default() -> Self {
        Self {
            model_name: DEFAULT_MODEL.to_string(),
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            force_structured_output: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MessagePart {
    Text(String),
    /// PNG-encoded image.
    Image(Vec<u8>),
}

impl MessagePart {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            MessagePart::Text(t) => Some(t),
            MessagePart::Image(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub parts: Vec<MessagePart>,
    pub params: ChatParams,
}

impl ChatRequest {
    pub fn new(parts: Vec<MessagePart>, params: ChatParams) -> Self {
        Self { parts, params }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !self.parts.iter().any(|p| matches!(p, MessagePart::Text(_))) {
            return Err(GatewayError::InvalidRequest("request has no text part".into()));
        }
        for (name, v) in [("temperature", self.params.temperature), ("top_p", self.params.top_p)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(GatewayError::InvalidRequest(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.parts.iter().filter_map(MessagePart::as_text)
    }

    pub fn image_count(&self) -> usize {
        self.parts.iter().filter(|p| matches!(p, MessagePart::Image(_))).count()
    }

    pub fn cache_key(&self) -> CacheKey {
        CacheKey::of(self)
    }

    /// Parses the `[meta]` text part, if any, into key/value pairs.
    pub fn metadata(&self) -> Option<RequestMeta> {
        self.texts().find_map(RequestMeta::parse)
    }
}

/// Hex SHA-256 over every field of a request that can change the answer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey(pub String);

impl CacheKey {
    pub fn of(req: &ChatRequest) -> Self {
        let mut h = Sha256::new();
        let mut field = |tag: u8, bytes: &[u8]| {
            h.update([tag]);
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        field(b'm', req.params.model_name.as_bytes());
        field(b't', &req.params.temperature.to_bits().to_le_bytes());
        field(b'p', &req.params.top_p.to_bits().to_le_bytes());
        field(b'j', &[req.params.force_structured_output as u8]);
        for part in &req.parts {
            match part {
                MessagePart::Text(t) => field(b'T', t.as_bytes()),
                MessagePart::Image(b) => field(b'I', b),
            }
        }
        CacheKey(hex::encode(h.finalize()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
    pub backend_id: String,
}

/// Which prompt stage a request belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Reference,
    Analyze,
    Reflect,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Reference => "reference",
            Stage::Analyze => "analyze",
            Stage::Reflect => "reflect",
        }
    }
}

/// Placement metadata carried in a trailing text part of each request.
///
/// Rendered as `[meta] stage=analyze window=3 start=450 width=300`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestMeta {
    pub stage: Stage,
    pub window_index: Option<usize>,
    pub window_start: Option<usize>,
    pub window_width: Option<usize>,
}

impl RequestMeta {
    pub const PREFIX: &'static str = "[meta]";

    pub fn reference() -> Self {
        Self {
            stage: Stage::Reference,
            window_index: None,
            window_start: None,
            window_width: None,
        }
    }

    pub fn window(stage: Stage, index: usize, start: usize, width: usize) -> Self {
        Self {
            stage,
            window_index: Some(index),
            window_start: Some(start),
            window_width: Some(width),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} stage={}", Self::PREFIX, self.stage.as_str());
        for (k, v) in [
            ("window", self.window_index),
            ("start", self.window_start),
            ("width", self.window_width),
        ] {
            if let Some(v) = v {
                s.push_str(&format!(" {k}={v}"));
            }
        }
        s
    }

    pub fn parse(text: &str) -> Option<Self> {
        let rest = text.trim().strip_prefix(Self::PREFIX)?;
        let kv: BTreeMap<&str, &str> = rest.split_whitespace().filter_map(|t| t.split_once('=')).collect();
        let stage = match *kv.get("stage")? {
            "reference" => Stage::Reference,
            "analyze" => Stage::Analyze,
            "reflect" => Stage::Reflect,
            _ => return None,
        };
        let num = |k: &str| kv.get(k).and_then(|v| v.parse().ok());
        Some(Self {
            stage,
            window_index: num("window"),
            window_start: num("start"),
            window_width: num("width"),
        })
    }
}

/// A chat-completion backend.
pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// Counting semaphore bounding concurrent requests.
struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.available.lock().expect("limiter poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("limiter poisoned") += 1;
        self.0.freed.notify_one();
    }
}

/// The handle the pipeline talks to: a backend, the run's sampling
/// parameters and an in-flight limit.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    params: ChatParams,
    limiter: Arc<Limiter>,
    max_in_flight: usize,
    calls: Arc<AtomicUsize>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, params: ChatParams, max_in_flight: usize) -> Self {
        Self {
            backend,
            params,
            limiter: Arc::new(Limiter::new(max_in_flight)),
            max_in_flight: max_in_flight.max(1),
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn params(&self) -> &ChatParams {
        &self.params
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    /// Number of requests issued through this gateway so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn request(&self, parts: Vec<MessagePart>) -> ChatRequest {
        ChatRequest::new(parts, self.params.clone())
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let _permit = self.limiter.acquire();
        self.calls.fetch_add(1, Ordering::SeqCst);
        let resp = self.backend.complete(req)?;
        if resp.text.trim().is_empty() {
            return Err(GatewayError::BadResponse("empty completion text".into()));
        }
        Ok(resp)
    }
}
