//! Chat-completions client for hosted models, plus a replaying stand-in.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub const API_KEY_ENV: &str = "OSSA_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    Image { media_type: String, bytes: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn user(content: Vec<ContentPart>) -> Self {
        ChatMessage { role: "user".into(), content }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        ChatRequest { model: model.into(), messages, temperature: 0.0, max_tokens: 2048, timeout: Duration::from_secs(60) }
    }

    /// Wire body in chat-completions shape; images become base64 data URLs.
    pub fn to_wire(&self) -> Value {
        let messages: Vec<Value> = self
            .messages
            .iter()
            .map(|m| {
                let parts: Vec<Value> = m
                    .content
                    .iter()
                    .map(|p| match p {
                        ContentPart::Text { text } => json!({"type": "text", "text": text}),
                        ContentPart::Image { media_type, bytes } => {
                            let data = base64::engine::general_purpose::STANDARD.encode(bytes);
                            json!({"type": "image_url", "image_url": {"url": format!("data:{media_type};base64,{data}")}})
                        }
                    })
                    .collect();
                json!({"role": m.role, "content": parts})
            })
            .collect();
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Option<Usage>,
    pub latency: Duration,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChatError {
    #[error("authentication failed: {0}")]
    AuthError(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("transport error: {0}")]
    TransportError(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

pub trait ChatModel: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ChatError>;
}

/// Returns the same text for every request.
#[derive(Debug, Clone)]
pub struct ReplayModel {
    pub text: String,
}

impl ReplayModel {
    pub fn new(text: impl Into<String>) -> Self {
        ReplayModel { text: text.into() }
    }
}

impl ChatModel for ReplayModel {
    fn complete(&self, _request: &ChatRequest) -> Result<ChatResponse, ChatError> {
        Ok(ChatResponse { text: self.text.clone(), usage: None, latency: Duration::ZERO, attempts: 1 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            api_key,
            max_attempts: 3,
            initial_backoff: Duration::from_millis(250),
            max_in_flight: 4,
        }
    }

    /// Key taken from `OSSA_API_KEY`; an empty value counts as missing.
    pub fn from_env(base_url: impl Into<String>) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.trim().is_empty());
        Self::new(base_url, key)
    }
}

/// Counting semaphore capping concurrent requests.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().expect("in-flight counter poisoned");
        while *used >= self.limit {
            used = self.freed.wait(used).expect("in-flight counter poisoned");
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().expect("in-flight counter poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteChatClient {
    config: RemoteConfig,
    http: reqwest::blocking::Client,
    in_flight: InFlight,
}

enum Failure {
    Retry(ChatError),
    Fatal(ChatError),
}

impl RemoteChatClient {
    pub fn new(config: RemoteConfig) -> Result<Self, ChatError> {
        let http = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| ChatError::TransportError(e.to_string()))?;
        let limit = config.max_in_flight.max(1);
        Ok(RemoteChatClient { config, http, in_flight: InFlight { limit, used: Mutex::new(0), freed: Condvar::new() } })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, key: &str, request: &ChatRequest, body: &Value, attempts: u32) -> Result<(String, Option<Usage>), Failure> {
        let _permit = self.in_flight.acquire();
        let sent = self.http.post(self.endpoint()).bearer_auth(key).timeout(request.timeout).json(body).send();
        let response = match sent {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Err(Failure::Retry(ChatError::Timeout { attempts })),
            Err(e) => return Err(Failure::Retry(ChatError::TransportError(e.to_string()))),
        };
        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(Failure::Fatal(ChatError::AuthError(format!("server answered {status}"))));
        }
        if status.as_u16() == 429 {
            return Err(Failure::Retry(ChatError::RateLimited { attempts }));
        }
        if status.is_server_error() {
            return Err(Failure::Retry(ChatError::TransportError(format!("server answered {status}"))));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(ChatError::TransportError(format!("server answered {status}"))));
        }
        let value: Value = match response.json() {
            Ok(v) => v,
            Err(e) if e.is_timeout() => return Err(Failure::Retry(ChatError::Timeout { attempts })),
            Err(e) => return Err(Failure::Fatal(ChatError::MalformedResponse(e.to_string()))),
        };
        read_completion(&value).map_err(Failure::Fatal)
    }
}

impl ChatModel for RemoteChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ChatError> {
        let key = self
            .config
            .api_key
            .clone()
            .ok_or_else(|| ChatError::AuthError(format!("{API_KEY_ENV} is not set")))?;
        let body = request.to_wire();
        let started = Instant::now();
        let max = self.config.max_attempts.max(1);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&key, request, &body, attempts) {
                Ok((text, usage)) => {
                    return Ok(ChatResponse { text, usage, latency: started.elapsed(), attempts });
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(e)) if attempts >= max => return Err(e),
                Err(Failure::Retry(e)) => {
                    let backoff = self.config.initial_backoff * 2u32.saturating_pow(attempts - 1);
                    log::debug!("attempt {attempts} failed ({e}), retrying in {backoff:?}");
                    thread::sleep(backoff);
                }
            }
        }
    }
}

fn read_completion(value: &Value) -> Result<(String, Option<Usage>), ChatError> {
    let content = value
        .pointer("/choices/0/message/content")
        .ok_or_else(|| ChatError::MalformedResponse("missing choices[0].message.content".into()))?;
    let text = match content {
        Value::String(s) => s.clone(),
        // some servers return content as a list of typed parts
        Value::Array(parts) => parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect(),
        other => return Err(ChatError::MalformedResponse(format!("content is {other}"))),
    };
    let usage = value.get("usage").and_then(|u| serde_json::from_value(u.clone()).ok());
    Ok((text, usage))
}
