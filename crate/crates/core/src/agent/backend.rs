//! Chat-completion backends: a scripted playlist for tests and offline runs,
//! and an HTTP client for chat-completions compatible endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::message::{Message, Role, ToolCall, Usage};
use super::schema::ToolSchema;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl BackendError {
    fn retryable(&self) -> bool {
        match self {
            BackendError::Auth(_) => false,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            BackendError::Transport(_) | BackendError::Protocol(_) => true,
        }
    }
}

pub trait ChatBackend: Send {
    fn complete(&mut self, messages: &[Message], tools: &[ToolSchema]) -> Result<Message, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, base_delay_ms: 500 }
    }
}

/// One assistant turn with retries and exponential backoff. Authentication
/// failures and client errors are not retried.
pub fn llm_chat(
    backend: &mut dyn ChatBackend,
    messages: &[Message],
    tools: &[ToolSchema],
    policy: RetryPolicy,
) -> Result<Message, BackendError> {
    let mut delay = policy.base_delay_ms;
    let mut attempt = 1;
    loop {
        match backend.complete(messages, tools) {
            Ok(m) if m.content.is_empty() && m.tool_calls.is_empty() => {
                let err = BackendError::Protocol("response has neither text nor a tool call".into());
                if attempt >= policy.attempts {
                    return Err(err);
                }
            }
            Ok(m) => return Ok(m),
            Err(e) if !e.retryable() || attempt >= policy.attempts => return Err(e),
            Err(_) => {}
        }
        std::thread::sleep(Duration::from_millis(delay));
        delay = delay.saturating_mul(2);
        attempt += 1;
    }
}

/// A scripted assistant turn. `tool_call.arguments` may be a JSON object or
/// a raw string (to simulate malformed argument documents).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default)]
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ScriptedCall>,
    /// Held back until a user message containing this text arrives, then
    /// played before any remaining unguarded entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_user: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedCall {
    pub name: String,
    pub arguments: serde_json::Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Playlist {
    pub entries: Vec<ScriptEntry>,
}

impl Playlist {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub struct ScriptedBackend {
    entries: Vec<(ScriptEntry, bool)>,
    calls: usize,
}

impl ScriptedBackend {
    pub fn new(playlist: Playlist) -> Self {
        ScriptedBackend { entries: playlist.entries.into_iter().map(|e| (e, false)).collect(), calls: 0 }
    }

    fn next_entry(&mut self, messages: &[Message]) -> Option<ScriptEntry> {
        let last_assistant = messages.iter().rposition(|m| m.role == Role::Assistant);
        let fresh_user: Vec<&str> = messages[last_assistant.map_or(0, |i| i + 1)..]
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .collect();
        let guarded = self.entries.iter().position(|(e, used)| {
            !used && e.after_user.as_deref().is_some_and(|g| fresh_user.iter().any(|u| u.contains(g)))
        });
        let pick = guarded.or_else(|| self.entries.iter().position(|(e, used)| !used && e.after_user.is_none()))?;
        self.entries[pick].1 = true;
        Some(self.entries[pick].0.clone())
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&mut self, messages: &[Message], _tools: &[ToolSchema]) -> Result<Message, BackendError> {
        self.calls += 1;
        let Some(entry) = self.next_entry(messages) else {
            return Ok(Message::assistant("DONE: script finished"));
        };
        let mut msg = Message::assistant(entry.content);
        if let Some(call) = entry.tool_call {
            let arguments = match call.arguments {
                serde_json::Value::String(raw) => raw,
                other => other.to_string(),
            };
            msg.tool_calls.push(ToolCall { id: format!("call_{}", self.calls), name: call.name, arguments });
        }
        Ok(msg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// Base URL up to and including the API version, e.g. `https://host/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    300
}

pub struct HttpBackend {
    config: EndpointConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: EndpointConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpBackend { config, client })
    }

    fn api_key(&self) -> Result<String, BackendError> {
        match std::env::var(&self.config.api_key_env) {
            Ok(k) if !k.is_empty() => Ok(k),
            _ => Err(BackendError::Auth(format!(
                "environment variable {} is not set or empty",
                self.config.api_key_env
            ))),
        }
    }
}

fn parse_completion(body: &serde_json::Value) -> Result<Message, BackendError> {
    let msg = body
        .pointer("/choices/0/message")
        .ok_or_else(|| BackendError::Protocol("response has no choices[0].message".into()))?;
    let mut out = Message::assistant(msg.get("content").and_then(|c| c.as_str()).unwrap_or_default());
    if let Some(calls) = msg.get("tool_calls").and_then(|c| c.as_array()) {
        for (k, c) in calls.iter().enumerate() {
            let name = c
                .pointer("/function/name")
                .and_then(|n| n.as_str())
                .ok_or_else(|| BackendError::Protocol("tool call without a function name".into()))?;
            let arguments = match c.pointer("/function/arguments") {
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(other) => other.to_string(),
                None => String::new(),
            };
            let id = c.get("id").and_then(|i| i.as_str()).map_or_else(|| format!("call_{k}"), str::to_string);
            out.tool_calls.push(ToolCall { id, name: name.to_string(), arguments });
        }
    }
    if let Some(u) = body.get("usage") {
        let field = |k: &str| u.get(k).and_then(|v| v.as_u64()).unwrap_or(0);
        out.usage = Some(Usage { prompt_tokens: field("prompt_tokens"), completion_tokens: field("completion_tokens") });
    }
    Ok(out)
}

impl ChatBackend for HttpBackend {
    fn complete(&mut self, messages: &[Message], tools: &[ToolSchema]) -> Result<Message, BackendError> {
        let key = self.api_key()?;
        let mut body = serde_json::json!({
            "model": self.config.model,
            "messages": messages.iter().map(Message::to_wire).collect::<Vec<_>>(),
        });
        if !tools.is_empty() {
            body["tools"] = tools.iter().map(ToolSchema::to_wire).collect();
        }
        if let Some(t) = self.config.temperature {
            body["temperature"] = t.into();
        }
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let resp = self
            .client
            .post(&url)
            .bearer_auth(&key)
            .json(&body)
            .send()
            .map_err(|e| BackendError::Transport(e.without_url().to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if status == 401 || status == 403 {
            return Err(BackendError::Auth(format!(
                "endpoint rejected the key from {} (HTTP {status})",
                self.config.api_key_env
            )));
        }
        if !(200..300).contains(&status) {
            let mut snippet: String = text.replace(&key, "***").chars().take(500).collect();
            if snippet.is_empty() {
                snippet = "(empty body)".into();
            }
            return Err(BackendError::Status { status, body: snippet });
        }
        let json: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| BackendError::Protocol(format!("response is not JSON: {e}")))?;
        parse_completion(&json)
    }
}
