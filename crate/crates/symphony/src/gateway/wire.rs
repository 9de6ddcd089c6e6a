//! Chat-completions wire format.
//!
//! Request bodies are built through serde structs whose field order is fixed,
//! so serialization is byte-stable and pinned by golden-file tests. Frames go
//! out as base64 data URLs, downscaled to 720p bounds at load time.

use base64::Engine;
use serde::Serialize;

use crate::gateway::{ChatMessage, DecodeParams, EmbedInput, GatewayError, MessagePart};
use crate::media::load_frame_bytes;

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage>,
    temperature: f32,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Serialize)]
struct WireMessage {
    role: &'static str,
    content: WireContent,
}

#[derive(Serialize)]
#[serde(untagged)]
enum WireContent {
    Text(String),
    Parts(Vec<WirePart>),
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum WirePart {
    Text { text: String },
    ImageUrl { image_url: WireImageUrl },
}

#[derive(Serialize)]
struct WireImageUrl {
    url: String,
}

fn data_url(path: &std::path::Path) -> Result<String, GatewayError> {
    let (bytes, mime) = load_frame_bytes(path)?;
    let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
    Ok(format!("data:{mime};base64,{encoded}"))
}

/// Serializes one chat request. Messages with a single text part use plain
/// string content; anything else becomes a part array.
pub fn build_chat_body(
    model: &str,
    messages: &[ChatMessage],
    params: &DecodeParams,
) -> Result<Vec<u8>, GatewayError> {
    let mut wire_messages = Vec::with_capacity(messages.len());
    for message in messages {
        let content = match message.parts.as_slice() {
            [MessagePart::Text(t)] => WireContent::Text(t.clone()),
            parts => {
                let mut wire_parts = Vec::with_capacity(parts.len());
                for part in parts {
                    wire_parts.push(match part {
                        MessagePart::Text(t) => WirePart::Text { text: t.clone() },
                        MessagePart::Image(frame) => {
                            WirePart::ImageUrl { image_url: WireImageUrl { url: data_url(&frame.path)? } }
                        }
                    });
                }
                WireContent::Parts(wire_parts)
            }
        };
        wire_messages.push(WireMessage { role: message.role.as_str(), content });
    }
    let request = WireRequest {
        model,
        messages: wire_messages,
        temperature: params.temperature,
        max_tokens: params.max_tokens,
    };
    serde_json::to_vec(&request).map_err(|e| GatewayError::Protocol(e.to_string()))
}

#[derive(Serialize)]
struct WireEmbedRequest<'a> {
    model: &'a str,
    input: Vec<WireEmbedInput>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum WireEmbedInput {
    Text(String),
    Image { image_url: WireImageUrl },
}

/// Serializes one embeddings request. Text goes as a plain string entry,
/// images as a data-URL object.
pub fn build_embed_body(model: &str, input: &EmbedInput) -> Result<Vec<u8>, GatewayError> {
    let entry = match input {
        EmbedInput::Text(t) => WireEmbedInput::Text(t.clone()),
        EmbedInput::Image(path) => {
            WireEmbedInput::Image { image_url: WireImageUrl { url: data_url(path)? } }
        }
    };
    let request = WireEmbedRequest { model, input: vec![entry] };
    serde_json::to_vec(&request).map_err(|e| GatewayError::Protocol(e.to_string()))
}
