//! HTTP transport against chat-completions-compatible endpoints.

use std::collections::BTreeMap;
use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;

use crate::gateway::{
    build_chat_body, build_embed_body, BackendRole, ChatMessage, DecodeParams, EmbedInput,
    GatewayError, RoleConfig, Transport, TransportReply,
};

/// Talks to per-role HTTP endpoints. Auth tokens are read from the
/// environment variable named in each role's config, never stored.
pub struct HttpTransport {
    client: reqwest::Client,
    roles: BTreeMap<BackendRole, RoleConfig>,
}

impl HttpTransport {
    pub fn new(roles: BTreeMap<BackendRole, RoleConfig>) -> Self {
        HttpTransport { client: reqwest::Client::new(), roles }
    }

    fn role(&self, role: BackendRole) -> Result<&RoleConfig, GatewayError> {
        self.roles.get(&role).ok_or(GatewayError::RoleNotConfigured { role })
    }

    async fn post(
        &self,
        role: BackendRole,
        config: &RoleConfig,
        body: Vec<u8>,
    ) -> Result<serde_json::Value, GatewayError> {
        let mut request = self
            .client
            .post(&config.endpoint_url)
            .header("content-type", "application/json")
            .timeout(Duration::from_secs(config.timeout_s))
            .body(body);
        if let Some(env_name) = &config.api_key_env {
            let key = std::env::var(env_name)
                .map_err(|_| GatewayError::MissingApiKey(env_name.clone()))?;
            request = request.bearer_auth(key);
        }
        let response = request.send().await.map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout { role }
            } else {
                GatewayError::Network(e.to_string())
            }
        })?;
        let status = response.status().as_u16();
        if status == 429 {
            return Err(GatewayError::RateLimited { role });
        }
        if !(200..300).contains(&status) {
            return Err(GatewayError::HttpStatus { role, status });
        }
        let bytes = response.bytes().await.map_err(|e| GatewayError::Network(e.to_string()))?;
        serde_json::from_slice(&bytes).map_err(|e| GatewayError::Protocol(e.to_string()))
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: serde_json::Value,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

/// Accepts both plain-string and part-array response content.
fn content_text(content: &serde_json::Value) -> String {
    match content {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(|t| t.as_str()))
            .collect::<Vec<_>>()
            .join(""),
        _ => String::new(),
    }
}

#[async_trait]
impl Transport for HttpTransport {
    async fn chat(
        &self,
        role: BackendRole,
        messages: &[ChatMessage],
        params: &DecodeParams,
    ) -> Result<TransportReply, GatewayError> {
        let config = self.role(role)?;
        let body = build_chat_body(&config.model_name, messages, params)?;
        let value = self.post(role, config, body).await?;
        let parsed: ChatResponse = serde_json::from_value(value)
            .map_err(|e| GatewayError::Protocol(format!("chat response: {e}")))?;
        let choice = parsed
            .choices
            .first()
            .ok_or_else(|| GatewayError::Protocol("response has no choices".into()))?;
        Ok(TransportReply {
            text: content_text(&choice.message.content),
            prompt_tokens: parsed.usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: parsed.usage.as_ref().and_then(|u| u.completion_tokens),
        })
    }

    async fn embed(&self, input: &EmbedInput) -> Result<Vec<f32>, GatewayError> {
        let role = BackendRole::Embedder;
        let config = self.role(role)?;
        let body = build_embed_body(&config.model_name, input)?;
        let value = self.post(role, config, body).await?;
        let embedding = value
            .get("data")
            .and_then(|d| d.get(0))
            .and_then(|d| d.get("embedding"))
            .and_then(|e| e.as_array())
            .ok_or_else(|| GatewayError::Protocol("embedding response has no data".into()))?;
        embedding
            .iter()
            .map(|v| {
                v.as_f64()
                    .map(|f| f as f32)
                    .ok_or_else(|| GatewayError::Protocol("non-numeric embedding value".into()))
            })
            .collect()
    }
}
