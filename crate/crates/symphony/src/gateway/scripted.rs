//! Deterministic scripted backend for offline runs and tests.
//!
//! Chat responses come from two pools per role: entries with a `when` needle
//! answer any request whose text contains the needle (checked in script
//! order, reusable), and plain entries form a FIFO queue consumed one per
//! call. Concurrent fan-out paths key their entries by request content so the
//! pairing cannot depend on scheduling order.
//!
//! Embeddings are matched by needle against the text or the image path, with
//! a seeded-hash fallback so unmatched inputs still get stable, roughly
//! orthogonal vectors.

use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gateway::{
    BackendRole, ChatMessage, DecodeParams, EmbedInput, GatewayError, Transport, TransportReply,
};

fn default_embedding_dim() -> usize {
    64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedChat {
    pub role: BackendRole,
    pub response: String,
    /// Substring of the request text this entry answers. Absent means the
    /// entry joins the role's FIFO queue instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedEmbedding {
    /// Substring matched against the embedded text or the image path.
    pub needle: String,
    pub vector: Vec<f32>,
}

/// Serializable script driving a [`ScriptedTransport`]. Also the on-disk
/// format behind the CLI's `--backend-script` flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendScript {
    pub schema_version: u32,
    /// Hold time per chat call. Lets tests observe real overlap when
    /// exercising concurrency limits.
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default)]
    pub chat: Vec<ScriptedChat>,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default)]
    pub embeddings: Vec<ScriptedEmbedding>,
}

impl Default for BackendScript {
    fn default() -> Self {
        BackendScript::new()
    }
}

impl BackendScript {
    pub fn new() -> Self {
        BackendScript {
            schema_version: 1,
            latency_ms: 0,
            chat: Vec::new(),
            embedding_dim: default_embedding_dim(),
            embeddings: Vec::new(),
        }
    }

    /// Appends a FIFO response for `role`; responses are served in push order.
    pub fn respond(mut self, role: BackendRole, response: impl Into<String>) -> Self {
        self.chat.push(ScriptedChat { role, response: response.into(), when: None });
        self
    }

    /// Appends a needle-keyed response for `role`. An empty needle matches
    /// every request and so acts as a catch-all.
    pub fn respond_when(
        mut self,
        role: BackendRole,
        needle: impl Into<String>,
        response: impl Into<String>,
    ) -> Self {
        self.chat.push(ScriptedChat {
            role,
            response: response.into(),
            when: Some(needle.into()),
        });
        self
    }

    pub fn embed_needle(mut self, needle: impl Into<String>, vector: Vec<f32>) -> Self {
        self.embeddings.push(ScriptedEmbedding { needle: needle.into(), vector });
        self
    }

    pub fn with_latency_ms(mut self, latency_ms: u64) -> Self {
        self.latency_ms = latency_ms;
        self
    }

    pub fn with_embedding_dim(mut self, dim: usize) -> Self {
        self.embedding_dim = dim;
        self
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Protocol(format!("reading script {path:?}: {e}")))?;
        let script: BackendScript = serde_json::from_str(&raw)
            .map_err(|e| GatewayError::Protocol(format!("parsing script {path:?}: {e}")))?;
        if script.schema_version != 1 {
            return Err(GatewayError::Protocol(format!(
                "unsupported script schema_version {}",
                script.schema_version
            )));
        }
        Ok(script)
    }
}

#[derive(Default)]
struct RoleCounters {
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

struct InFlightGuard<'a>(&'a RoleCounters);

impl<'a> InFlightGuard<'a> {
    fn enter(counters: &'a RoleCounters) -> Self {
        let now = counters.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        counters.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        InFlightGuard(counters)
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Transport that replays a [`BackendScript`] and counts traffic per role.
pub struct ScriptedTransport {
    keyed: Vec<ScriptedChat>,
    queues: Mutex<BTreeMap<BackendRole, VecDeque<String>>>,
    embeddings: Vec<ScriptedEmbedding>,
    embedding_dim: usize,
    latency: Duration,
    counters: BTreeMap<BackendRole, RoleCounters>,
    requests: Mutex<Vec<(BackendRole, String)>>,
}

impl ScriptedTransport {
    pub fn new(script: BackendScript) -> Self {
        let mut keyed = Vec::new();
        let mut queues: BTreeMap<BackendRole, VecDeque<String>> = BTreeMap::new();
        for entry in script.chat {
            match entry.when {
                Some(_) => keyed.push(entry),
                None => queues.entry(entry.role).or_default().push_back(entry.response),
            }
        }
        ScriptedTransport {
            keyed,
            queues: Mutex::new(queues),
            embeddings: script.embeddings,
            embedding_dim: script.embedding_dim.max(1),
            latency: Duration::from_millis(script.latency_ms),
            counters: BackendRole::ALL.iter().map(|&r| (r, RoleCounters::default())).collect(),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Chat and embed calls made for `role` so far.
    pub fn calls(&self, role: BackendRole) -> usize {
        self.counters[&role].calls.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneous calls observed for `role`.
    pub fn peak_in_flight(&self, role: BackendRole) -> usize {
        self.counters[&role].peak_in_flight.load(Ordering::SeqCst)
    }

    /// Text of every request sent to `role`, in arrival order. Chat requests
    /// record their joined message text, embeds their input key.
    pub fn requests(&self, role: BackendRole) -> Vec<String> {
        self.requests
            .lock()
            .expect("request lock")
            .iter()
            .filter(|(r, _)| *r == role)
            .map(|(_, text)| text.clone())
            .collect()
    }

    fn record_request(&self, role: BackendRole, text: String) {
        self.requests.lock().expect("request lock").push((role, text));
    }

    fn lookup(&self, role: BackendRole, request_text: &str, index: usize) -> Result<String, GatewayError> {
        for entry in &self.keyed {
            if entry.role == role {
                let needle = entry.when.as_deref().unwrap_or_default();
                if request_text.contains(needle) {
                    return Ok(entry.response.clone());
                }
            }
        }
        let mut queues = self.queues.lock().expect("queue lock");
        queues
            .get_mut(&role)
            .and_then(|q| q.pop_front())
            .ok_or(GatewayError::ScriptExhausted { role, index })
    }
}

fn normalize(mut v: Vec<f32>) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

/// Stable pseudo-embedding for inputs the script does not pin explicitly.
fn hash_embedding(key: &str, dim: usize) -> Vec<f32> {
    let mut hasher = DefaultHasher::new();
    key.hash(&mut hasher);
    let mut rng = ChaCha8Rng::seed_from_u64(hasher.finish());
    normalize((0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect())
}

#[async_trait]
impl Transport for ScriptedTransport {
    async fn chat(
        &self,
        role: BackendRole,
        messages: &[ChatMessage],
        _params: &DecodeParams,
    ) -> Result<TransportReply, GatewayError> {
        let counters = &self.counters[&role];
        let index = counters.calls.fetch_add(1, Ordering::SeqCst);
        let _guard = InFlightGuard::enter(counters);
        if !self.latency.is_zero() {
            tokio::time::sleep(self.latency).await;
        }
        let request_text: String =
            messages.iter().map(|m| m.text()).collect::<Vec<_>>().join("\n");
        self.record_request(role, request_text.clone());
        let text = self.lookup(role, &request_text, index)?;
        Ok(TransportReply { text, prompt_tokens: None, completion_tokens: None })
    }

    async fn embed(&self, input: &EmbedInput) -> Result<Vec<f32>, GatewayError> {
        let counters = &self.counters[&BackendRole::Embedder];
        counters.calls.fetch_add(1, Ordering::SeqCst);
        let _guard = InFlightGuard::enter(counters);
        if !self.latency.is_zero() {
            tokio::time::sleep(self.latency).await;
        }
        let key = input.key();
        self.record_request(BackendRole::Embedder, key.clone());
        for entry in &self.embeddings {
            if key.contains(&entry.needle) {
                return Ok(normalize(entry.vector.clone()));
            }
        }
        Ok(hash_embedding(&key, self.embedding_dim))
    }
}
