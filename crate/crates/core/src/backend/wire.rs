//! Chat-completions request and response bodies.

use std::path::Path;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendConfig, BackendError};
use crate::model::MediaRef;
use crate::pairs::AugmentationRequest;
use crate::prompt::{ConversationPrompt, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: Content,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Content {
    Text(String),
    Parts(Vec<Part>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Part {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

fn wire_role(role: Role) -> &'static str {
    match role {
        Role::Human => "user",
        Role::Assistant => "assistant",
    }
}

fn mime_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        _ => "application/octet-stream",
    }
}

/// URL for an image content part: remote and data URLs pass through, local
/// files become base64 data URIs.
pub fn image_url(media: &MediaRef) -> Result<String, BackendError> {
    let uri = media.uri.as_str();
    if uri.starts_with("http://") || uri.starts_with("https://") || uri.starts_with("data:") {
        return Ok(uri.to_string());
    }
    let path = Path::new(uri.strip_prefix("file://").unwrap_or(uri));
    let bytes = std::fs::read(path)
        .map_err(|e| BackendError::ImageLoadError { uri: uri.to_string(), reason: e.to_string() })?;
    let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
    Ok(format!("data:{};base64,{encoded}", mime_for(path)))
}

/// Messages mirroring the prompt's turns; images go before the text of their turn.
pub fn chat_request(prompt: &ConversationPrompt, cfg: &BackendConfig) -> Result<ChatRequest, BackendError> {
    let mut messages = Vec::new();
    for turn in prompt.turns() {
        let content = match turn.image {
            Some(image) => Content::Parts(vec![
                Part::ImageUrl { image_url: ImageUrl { url: image_url(image)? } },
                Part::Text { text: turn.text.to_string() },
            ]),
            None => Content::Text(turn.text.to_string()),
        };
        messages.push(Message { role: wire_role(turn.role).to_string(), content });
    }
    Ok(ChatRequest {
        model: cfg.model_name.clone(),
        messages,
        temperature: cfg.temperature,
        max_tokens: cfg.max_tokens,
    })
}

pub fn augmentation_request(req: &AugmentationRequest, cfg: &BackendConfig) -> Result<ChatRequest, BackendError> {
    let mut parts = Vec::with_capacity(2);
    if req.has_image() {
        parts.push(Part::ImageUrl { image_url: ImageUrl { url: image_url(&req.image)? } });
    }
    parts.push(Part::Text { text: req.prompt_text() });
    Ok(ChatRequest {
        model: cfg.model_name.clone(),
        messages: vec![Message { role: "user".into(), content: Content::Parts(parts) }],
        temperature: cfg.temperature,
        max_tokens: cfg.max_tokens,
    })
}

/// Serialized request. Identical prompts give identical bytes.
pub fn encode(request: &ChatRequest) -> Vec<u8> {
    serde_json::to_vec(request).expect("serializable request")
}

/// Assistant text of the first choice. Array contents have their text parts concatenated.
pub fn parse_response(body: &str) -> Result<String, BackendError> {
    let value: Value = serde_json::from_str(body).map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
    let content = value
        .pointer("/choices/0/message/content")
        .ok_or_else(|| BackendError::InvalidResponse("missing choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => {
            Ok(parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect::<Vec<_>>().join(""))
        }
        Value::Null => Ok(String::new()),
        other => Err(BackendError::InvalidResponse(format!("unexpected content {other}"))),
    }
}
