//! Blocking wire client for chat-completion endpoints that expose token
//! log-probabilities. Requests are single-token, temperature-0 completions;
//! every exchange can be appended to an audit log with image content
//! replaced by its hash.

use std::io::Write;
use std::sync::Mutex;

use base64::Engine as _;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::prompt::PromptPart;
use super::{Backend, BackendConfig, BackendError, CompletionRequest, TokenLogprob};

pub struct HttpBackend {
    config: BackendConfig,
    client: reqwest::blocking::Client,
    audit: Option<AuditLog>,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let audit = match &config.audit_log {
            Some(path) => Some(AuditLog::open(path)?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            config,
            client,
            audit,
        })
    }

    fn credential(&self) -> Result<String, BackendError> {
        std::env::var(&self.config.credential_env)
            .map_err(|_| BackendError::MissingCredential(self.config.credential_env.clone()))
    }

    fn send(&self, body: &Value) -> Result<Value, BackendError> {
        let token = self.credential()?;
        let mut attempt = 0u32;
        loop {
            let result = self
                .client
                .post(&self.config.endpoint)
                .bearer_auth(&token)
                .json(body)
                .send();
            let retryable = match &result {
                Ok(resp) => resp.status().is_server_error(),
                Err(_) => true,
            };
            if retryable && attempt < self.config.retries {
                let backoff = self.config.backoff_ms.saturating_mul(1 << attempt);
                std::thread::sleep(std::time::Duration::from_millis(backoff));
                attempt += 1;
                continue;
            }
            let resp = result.map_err(|e| BackendError::Transport(e.to_string()))?;
            let status = resp.status();
            let text = resp
                .text()
                .map_err(|e| BackendError::Transport(e.to_string()))?;
            if !status.is_success() {
                return Err(BackendError::Http {
                    status: status.as_u16(),
                    body: text,
                });
            }
            return serde_json::from_str(&text)
                .map_err(|e| BackendError::BadResponse(e.to_string()));
        }
    }
}

impl Backend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn top_logprobs(&self, request: &CompletionRequest) -> Result<Vec<TokenLogprob>, BackendError> {
        let body = build_request_body(&self.config, request)?;
        let response = self.send(&body)?;
        if let Some(audit) = &self.audit {
            audit.append(request, &response)?;
        }
        parse_top_logprobs(&response)
    }
}

fn mime_for(path: &str) -> &'static str {
    match path.rsplit('.').next() {
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "image/png",
    }
}

fn load_image(image_ref: &str) -> Result<(String, Vec<u8>), BackendError> {
    let bytes = std::fs::read(image_ref)
        .map_err(|e| BackendError::ImageRead(image_ref.to_string(), e.to_string()))?;
    Ok((mime_for(image_ref).to_string(), bytes))
}

fn content_items(parts: &[PromptPart]) -> Result<Vec<Value>, BackendError> {
    parts
        .iter()
        .map(|part| match part {
            PromptPart::Text { text } => Ok(json!({ "type": "text", "text": text })),
            PromptPart::Image { image_ref } => {
                let (mime, bytes) = load_image(image_ref)?;
                let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
                Ok(json!({
                    "type": "image_url",
                    "image_url": { "url": format!("data:{mime};base64,{b64}") }
                }))
            }
        })
        .collect()
}

/// Serializes a completion request into the chat-completions wire body:
/// temperature 0, one output token, logprobs enabled.
pub fn build_request_body(
    config: &BackendConfig,
    request: &CompletionRequest,
) -> Result<Value, BackendError> {
    let mut messages = Vec::new();
    if let Some(system) = &config.system_prompt {
        messages.push(json!({ "role": "system", "content": system }));
    }
    for exemplar in &request.few_shot {
        messages.push(json!({ "role": "user", "content": content_items(exemplar)? }));
    }
    messages.push(json!({ "role": "user", "content": content_items(&request.query)? }));
    Ok(json!({
        "model": config.model,
        "messages": messages,
        "temperature": 0,
        "max_tokens": 1,
        "logprobs": true,
        "top_logprobs": config.top_logprobs,
    }))
}

/// Pulls the first generated token's top-logprobs out of a chat-completions
/// response, including the chosen token itself.
pub fn parse_top_logprobs(response: &Value) -> Result<Vec<TokenLogprob>, BackendError> {
    let first = response
        .pointer("/choices/0/logprobs/content/0")
        .ok_or(BackendError::NoLogprobs)?;
    let mut out = Vec::new();
    if let (Some(token), Some(logprob)) = (
        first.get("token").and_then(Value::as_str),
        first.get("logprob").and_then(Value::as_f64),
    ) {
        out.push(TokenLogprob {
            token: token.to_string(),
            logprob,
        });
    }
    if let Some(list) = first.get("top_logprobs").and_then(Value::as_array) {
        for item in list {
            let token = item
                .get("token")
                .and_then(Value::as_str)
                .ok_or_else(|| BackendError::BadResponse("top_logprobs item without token".into()))?;
            let logprob = item
                .get("logprob")
                .and_then(Value::as_f64)
                .ok_or_else(|| BackendError::BadResponse("top_logprobs item without logprob".into()))?;
            if !out.iter().any(|tl| tl.token == token) {
                out.push(TokenLogprob {
                    token: token.to_string(),
                    logprob,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(BackendError::NoLogprobs);
    }
    Ok(out)
}

/// Append-only exchange log: one JSON object per line with the request hash,
/// the rendered prompt (images by content hash), the raw response and a
/// timestamp. Writes are serialized through a single writer.
pub struct AuditLog {
    writer: Mutex<std::fs::File>,
}

impl AuditLog {
    pub fn open(path: &std::path::Path) -> Result<Self, BackendError> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BackendError::Audit(e.to_string()))?;
        Ok(Self {
            writer: Mutex::new(file),
        })
    }

    fn hash_images(parts: &[PromptPart]) -> Vec<Value> {
        parts
            .iter()
            .map(|part| match part {
                PromptPart::Text { text } => json!({ "text": text }),
                PromptPart::Image { image_ref } => {
                    let digest = std::fs::read(image_ref)
                        .map(|bytes| {
                            let mut hasher = Sha256::new();
                            hasher.update(&bytes);
                            format!("sha256:{:x}", hasher.finalize())
                        })
                        .unwrap_or_else(|_| format!("unresolved:{image_ref}"));
                    json!({ "image": digest })
                }
            })
            .collect()
    }

    pub fn append(
        &self,
        request: &CompletionRequest,
        response: &Value,
    ) -> Result<(), BackendError> {
        let prompt: Vec<Value> = request
            .few_shot
            .iter()
            .map(|m| Value::Array(Self::hash_images(m)))
            .chain(std::iter::once(Value::Array(Self::hash_images(
                &request.query,
            ))))
            .collect();
        let entry = json!({
            "request_hash": super::request_hash(request),
            "prompt": prompt,
            "raw_response": response,
            "timestamp": chrono::Utc::now().to_rfc3339(),
        });
        let mut file = self
            .writer
            .lock()
            .map_err(|_| BackendError::Audit("poisoned audit lock".into()))?;
        writeln!(file, "{entry}").map_err(|e| BackendError::Audit(e.to_string()))
    }
}
