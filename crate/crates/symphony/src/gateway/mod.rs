//! Model access layer.
//!
//! Every model call in the system goes through a [`GatewaySession`], which
//! applies per-role concurrency limits, a shared retry policy and exchange
//! recording. The transport underneath is swappable: HTTP against any
//! chat-completions-compatible endpoint in production, a scripted stand-in
//! for offline runs and tests.

mod http;
mod json_extract;
mod scripted;
mod wire;

pub use http::HttpTransport;
pub use json_extract::extract_json;
pub use scripted::{BackendScript, ScriptedTransport};
pub use wire::{build_chat_body, build_embed_body};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, Semaphore};

use crate::media::MediaError;
use crate::types::Timecode;

/// The five backend roles the system distinguishes. Each can point at a
/// different model and endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendRole {
    Planner,
    Reflector,
    SubtitleLlm,
    Vlm,
    Embedder,
}

impl BackendRole {
    pub const ALL: [BackendRole; 5] = [
        BackendRole::Planner,
        BackendRole::Reflector,
        BackendRole::SubtitleLlm,
        BackendRole::Vlm,
        BackendRole::Embedder,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendRole::Planner => "planner",
            BackendRole::Reflector => "reflector",
            BackendRole::SubtitleLlm => "subtitle_llm",
            BackendRole::Vlm => "vlm",
            BackendRole::Embedder => "embedder",
        }
    }
}

impl fmt::Display for BackendRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("{role} request timed out")]
    Timeout { role: BackendRole },
    #[error("{role} request was rate limited")]
    RateLimited { role: BackendRole },
    #[error("{role} request failed with HTTP {status}")]
    HttpStatus { role: BackendRole, status: u16 },
    #[error("network error: {0}")]
    Network(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no JSON object found in model output")]
    NoJsonFound,
    #[error("request carries {count} frames, cap is {cap}")]
    FrameLimitExceeded { count: usize, cap: usize },
    #[error("vision request carries no frames")]
    NoFrames,
    #[error("chat request carries no messages")]
    EmptyMessages,
    #[error("image parts are only valid for the vlm role, not {role}")]
    ImagesRequireVlm { role: BackendRole },
    #[error("script exhausted for {role} at call index {index}")]
    ScriptExhausted { role: BackendRole, index: usize },
    #[error("no backend configured for role {role}")]
    RoleNotConfigured { role: BackendRole },
    #[error("api key environment variable {0} is not set")]
    MissingApiKey(String),
    #[error(transparent)]
    Media(#[from] MediaError),
}

impl GatewayError {
    /// Whether the retry policy applies: timeouts, rate limiting and server
    /// errors. Client errors and malformed requests surface immediately.
    pub fn is_retryable(&self) -> bool {
        match self {
            GatewayError::Timeout { .. }
            | GatewayError::RateLimited { .. }
            | GatewayError::Network(_) => true,
            GatewayError::HttpStatus { status, .. } => (500..=599).contains(status),
            _ => false,
        }
    }
}

/// Conversation roles on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

impl ChatRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ChatRole::System => "system",
            ChatRole::User => "user",
            ChatRole::Assistant => "assistant",
        }
    }
}

/// A frame attached to a vision request. The optional label is prepended to
/// the timestamp text that precedes the image on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisionFrame {
    pub at: Timecode,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl VisionFrame {
    pub fn new(at: Timecode, path: impl Into<PathBuf>) -> Self {
        VisionFrame { at, path: path.into(), label: None }
    }

    pub fn labeled(at: Timecode, path: impl Into<PathBuf>, label: impl Into<String>) -> Self {
        VisionFrame { at, path: path.into(), label: Some(label.into()) }
    }

    /// Text announced before the image: `00:01:05` or `Segment 2 | 00:01:05`.
    pub fn caption(&self) -> String {
        match &self.label {
            Some(label) => format!("{} | {}", label, self.at),
            None => self.at.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessagePart {
    Text(String),
    Image(VisionFrame),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub parts: Vec<MessagePart>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::System, parts: vec![MessagePart::Text(text.into())] }
    }

    pub fn user(text: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::User, parts: vec![MessagePart::Text(text.into())] }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::Assistant, parts: vec![MessagePart::Text(text.into())] }
    }

    /// All text content, with frame captions standing in for images. This is
    /// what scripted matching and token estimation look at.
    pub fn text(&self) -> String {
        self.parts
            .iter()
            .map(|p| match p {
                MessagePart::Text(t) => t.clone(),
                MessagePart::Image(f) => f.caption(),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn image_count(&self) -> usize {
        self.parts.iter().filter(|p| matches!(p, MessagePart::Image(_))).count()
    }
}

/// Sampling settings for one call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

/// Input to the embedding backend.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbedInput {
    Text(String),
    Image(PathBuf),
}

impl EmbedInput {
    /// Key used for scripted matching and token estimation.
    pub fn key(&self) -> String {
        match self {
            EmbedInput::Text(t) => t.clone(),
            EmbedInput::Image(p) => p.to_string_lossy().into_owned(),
        }
    }
}

/// What a transport hands back for one chat call. Token counts are absent
/// when the backend does not report usage; the session then estimates them.
#[derive(Debug, Clone)]
pub struct TransportReply {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

/// The swappable lower half of the gateway.
#[async_trait]
pub trait Transport: Send + Sync {
    async fn chat(
        &self,
        role: BackendRole,
        messages: &[ChatMessage],
        params: &DecodeParams,
    ) -> Result<TransportReply, GatewayError>;

    async fn embed(&self, input: &EmbedInput) -> Result<Vec<f32>, GatewayError>;
}

/// Record of one attempt against a backend, successful or not.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelExchange {
    pub backend: BackendRole,
    pub request_messages: Vec<ChatMessage>,
    pub response_text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    /// 1-based attempt number; retries of the same call count up from 1.
    pub attempt: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Token usage accumulated for one role.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleTokens {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub calls: u64,
}

/// Per-role backend settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleConfig {
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    pub max_concurrency: usize,
    pub timeout_s: u64,
    pub temperature: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl RoleConfig {
    pub(crate) fn default_for(role: BackendRole) -> Self {
        let temperature = match role {
            BackendRole::Planner => 0.6,
            _ => 0.0,
        };
        let max_concurrency = match role {
            BackendRole::Vlm => 20,
            BackendRole::Embedder => 32,
            _ => 4,
        };
        RoleConfig {
            endpoint_url: String::new(),
            model_name: String::new(),
            api_key_env: None,
            max_concurrency,
            timeout_s: 120,
            temperature,
            max_tokens: None,
        }
    }
}

/// Gateway-wide settings: one config per role plus the retry policy and the
/// hard frame cap for vision requests.
#[derive(Debug, Clone, PartialEq)]
pub struct GatewayConfig {
    pub roles: BTreeMap<BackendRole, RoleConfig>,
    pub frame_cap: usize,
    pub max_attempts: usize,
    pub backoff: Vec<Duration>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            roles: BackendRole::ALL
                .iter()
                .map(|&r| (r, RoleConfig::default_for(r)))
                .collect(),
            frame_cap: 40,
            max_attempts: 3,
            backoff: vec![Duration::from_secs(1), Duration::from_secs(4)],
        }
    }
}

impl GatewayConfig {
    fn decode_params(&self, role: BackendRole) -> DecodeParams {
        match self.roles.get(&role) {
            Some(rc) => DecodeParams { temperature: rc.temperature, max_tokens: rc.max_tokens },
            None => DecodeParams { temperature: 0.0, max_tokens: None },
        }
    }
}

struct GatewayInner {
    transport: Arc<dyn Transport>,
    config: GatewayConfig,
    limiters: BTreeMap<BackendRole, Arc<Semaphore>>,
}

/// Shared model access handle. Cloning is cheap; concurrency limits are
/// global across clones and sessions.
#[derive(Clone)]
pub struct ModelGateway {
    inner: Arc<GatewayInner>,
}

impl ModelGateway {
    pub fn new(transport: Arc<dyn Transport>, config: GatewayConfig) -> Self {
        let limiters = BackendRole::ALL
            .iter()
            .map(|&r| {
                let permits = config.roles.get(&r).map(|c| c.max_concurrency.max(1)).unwrap_or(1);
                (r, Arc::new(Semaphore::new(permits)))
            })
            .collect();
        ModelGateway { inner: Arc::new(GatewayInner { transport, config, limiters }) }
    }

    /// Gateway over a scripted transport with default settings, the usual
    /// entry point for offline runs.
    pub fn scripted(script: BackendScript) -> Self {
        ModelGateway::new(Arc::new(ScriptedTransport::new(script)), GatewayConfig::default())
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.inner.config
    }

    /// Opens a session with its own exchange log. Each episode gets one so
    /// token accounting stays per-episode while limits stay global.
    pub fn session(&self) -> GatewaySession {
        GatewaySession { gateway: self.clone(), exchanges: Arc::new(Mutex::new(Vec::new())) }
    }
}

/// A gateway handle that records every exchange it makes.
#[derive(Clone)]
pub struct GatewaySession {
    gateway: ModelGateway,
    exchanges: Arc<Mutex<Vec<ModelExchange>>>,
}

fn estimate_tokens(chars: usize) -> u64 {
    (chars as u64 + 3) / 4
}

/// Flat per-image token estimate used when the backend reports no usage.
const IMAGE_TOKEN_ESTIMATE: u64 = 256;

impl GatewaySession {
    /// One chat call with the role's default decode parameters.
    pub async fn chat(
        &self,
        role: BackendRole,
        messages: &[ChatMessage],
    ) -> Result<String, GatewayError> {
        let params = self.gateway.inner.config.decode_params(role);
        self.chat_with(role, messages, &params).await
    }

    pub async fn chat_with(
        &self,
        role: BackendRole,
        messages: &[ChatMessage],
        params: &DecodeParams,
    ) -> Result<String, GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::EmptyMessages);
        }
        let image_count: usize = messages.iter().map(|m| m.image_count()).sum();
        if image_count > 0 && role != BackendRole::Vlm {
            return Err(GatewayError::ImagesRequireVlm { role });
        }
        let cap = self.gateway.inner.config.frame_cap;
        if image_count > cap {
            return Err(GatewayError::FrameLimitExceeded { count: image_count, cap });
        }

        let limiter = self.gateway.inner.limiters[&role].clone();
        let _permit = limiter.acquire_owned().await.expect("limiter never closed");

        let prompt_chars: usize = messages.iter().map(|m| m.text().chars().count()).sum();
        let prompt_estimate =
            estimate_tokens(prompt_chars) + image_count as u64 * IMAGE_TOKEN_ESTIMATE;
        let max_attempts = self.gateway.inner.config.max_attempts.max(1);
        for attempt in 1..=max_attempts {
            let started = std::time::Instant::now();
            let result = self.gateway.inner.transport.chat(role, messages, params).await;
            let latency_ms = started.elapsed().as_millis() as u64;
            match result {
                Ok(reply) => {
                    self.record(ModelExchange {
                        backend: role,
                        request_messages: messages.to_vec(),
                        response_text: reply.text.clone(),
                        prompt_tokens: reply.prompt_tokens.unwrap_or(prompt_estimate),
                        completion_tokens: reply
                            .completion_tokens
                            .unwrap_or_else(|| estimate_tokens(reply.text.chars().count())),
                        latency_ms,
                        attempt,
                        error: None,
                    })
                    .await;
                    return Ok(reply.text);
                }
                Err(e) => {
                    self.record(ModelExchange {
                        backend: role,
                        request_messages: messages.to_vec(),
                        response_text: String::new(),
                        prompt_tokens: 0,
                        completion_tokens: 0,
                        latency_ms,
                        attempt,
                        error: Some(e.to_string()),
                    })
                    .await;
                    if e.is_retryable() && attempt < max_attempts {
                        let backoff = self
                            .gateway
                            .inner
                            .config
                            .backoff
                            .get(attempt - 1)
                            .copied()
                            .unwrap_or(Duration::from_secs(1));
                        tokio::time::sleep(backoff).await;
                        continue;
                    }
                    return Err(e);
                }
            }
        }
        unreachable!("loop always returns");
    }

    /// Vision call against the VLM role. Frames are sorted by timestamp and
    /// each is announced by a text part carrying its caption.
    pub async fn vision_chat(
        &self,
        prompt: &str,
        frames: &[VisionFrame],
    ) -> Result<String, GatewayError> {
        if frames.is_empty() {
            return Err(GatewayError::NoFrames);
        }
        let cap = self.gateway.inner.config.frame_cap;
        if frames.len() > cap {
            return Err(GatewayError::FrameLimitExceeded { count: frames.len(), cap });
        }
        let mut ordered: Vec<VisionFrame> = frames.to_vec();
        ordered.sort_by_key(|f| f.at);
        let mut parts = Vec::with_capacity(1 + ordered.len() * 2);
        parts.push(MessagePart::Text(prompt.to_string()));
        for frame in ordered {
            parts.push(MessagePart::Text(frame.caption()));
            parts.push(MessagePart::Image(frame));
        }
        let message = ChatMessage { role: ChatRole::User, parts };
        self.chat(BackendRole::Vlm, &[message]).await
    }

    pub async fn embed_text(&self, text: &str) -> Result<Vec<f32>, GatewayError> {
        self.embed(&EmbedInput::Text(text.to_string())).await
    }

    pub async fn embed_image(&self, path: &Path) -> Result<Vec<f32>, GatewayError> {
        self.embed(&EmbedInput::Image(path.to_path_buf())).await
    }

    async fn embed(&self, input: &EmbedInput) -> Result<Vec<f32>, GatewayError> {
        let role = BackendRole::Embedder;
        let limiter = self.gateway.inner.limiters[&role].clone();
        let _permit = limiter.acquire_owned().await.expect("limiter never closed");
        let key = input.key();
        let max_attempts = self.gateway.inner.config.max_attempts.max(1);
        for attempt in 1..=max_attempts {
            let started = std::time::Instant::now();
            let result = self.gateway.inner.transport.embed(input).await;
            let latency_ms = started.elapsed().as_millis() as u64;
            let (error, tokens) = match &result {
                Ok(_) => (None, estimate_tokens(key.chars().count())),
                Err(e) => (Some(e.to_string()), 0),
            };
            self.record(ModelExchange {
                backend: role,
                request_messages: vec![ChatMessage::user(key.clone())],
                response_text: String::new(),
                prompt_tokens: tokens,
                completion_tokens: 0,
                latency_ms,
                attempt,
                error,
            })
            .await;
            match result {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < max_attempts => {
                    let backoff = self
                        .gateway
                        .inner
                        .config
                        .backoff
                        .get(attempt - 1)
                        .copied()
                        .unwrap_or(Duration::from_secs(1));
                    tokio::time::sleep(backoff).await;
                }
                Err(e) => return Err(e),
            }
        }
        unreachable!("loop always returns");
    }

    async fn record(&self, exchange: ModelExchange) {
        self.exchanges.lock().await.push(exchange);
    }

    pub async fn exchanges(&self) -> Vec<ModelExchange> {
        self.exchanges.lock().await.clone()
    }

    /// Token totals per role, summed over every recorded exchange including
    /// failed attempts.
    pub async fn token_totals(&self) -> BTreeMap<BackendRole, RoleTokens> {
        let mut totals: BTreeMap<BackendRole, RoleTokens> = BTreeMap::new();
        for ex in self.exchanges.lock().await.iter() {
            let entry = totals.entry(ex.backend).or_default();
            entry.prompt_tokens += ex.prompt_tokens;
            entry.completion_tokens += ex.completion_tokens;
            entry.calls += 1;
        }
        totals
    }
}
