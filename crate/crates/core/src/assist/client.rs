//! LLM backends: a chat-completion HTTP client and a deterministic mock.

use super::CardKind;
use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;

/// Environment variable holding the bearer token for the HTTP client.
pub const API_KEY_ENV: &str = "SARA_LLM_API_KEY";

const SYSTEM_MESSAGE: &str = "You help people read difficult text. Answer briefly and only with the requested help.";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
}

/// One model call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionRequest {
    pub kind: CardKind,
    pub prompt: String,
    pub anchor_text: String,
    pub target_language: Option<String>,
}

/// A single-attempt model call. Retries and timeouts are applied by the caller.
#[async_trait]
pub trait LlmClient: Send + Sync {
    fn model_name(&self) -> &str;
    async fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError>;
}

/// What the mock answers with when it does not fail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockReply {
    /// `DEF(word)`, `TRANS[lang](word)` or `SIMPLE(first words…)`.
    Echo,
    Fixed(String),
    /// Deterministic filler text of exactly this many characters.
    Filler(usize),
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFailure {
    /// Returns a timeout error immediately.
    Timeout,
    /// Returns a transport error.
    Transport,
    /// Never answers; the caller's timeout fires.
    Hang,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSettings {
    pub model: String,
    pub reply: MockReply,
    /// Number of initial calls that fail.
    pub fail_first: u32,
    pub failure: MockFailure,
    /// Simulated latency per successful call.
    pub latency_ms: u64,
}

impl Default for MockSettings {
    fn default() -> Self {
        Self { model: "mock-echo".into(), reply: MockReply::Echo, fail_first: 0, failure: MockFailure::Timeout, latency_ms: 0 }
    }
}

/// Deterministic stand-in for a hosted model: the same request always yields
/// the same reply (after the scripted initial failures).
#[derive(Debug)]
pub struct MockLlm {
    settings: MockSettings,
    calls: AtomicU32,
}

impl MockLlm {
    pub fn new(settings: MockSettings) -> Self {
        Self { settings, calls: AtomicU32::new(0) }
    }

    pub fn echo() -> Self {
        Self::new(MockSettings::default())
    }

    pub fn calls(&self) -> u32 {
        self.calls.load(Ordering::SeqCst)
    }

    fn reply(&self, req: &CompletionRequest) -> String {
        match &self.settings.reply {
            MockReply::Echo => match req.kind {
                CardKind::Definition => format!("DEF({})", req.anchor_text),
                CardKind::Translation => {
                    format!("TRANS[{}]({})", req.target_language.as_deref().unwrap_or("?"), req.anchor_text)
                }
                CardKind::Simplification => {
                    let head: Vec<&str> = req.anchor_text.split_whitespace().take(6).collect();
                    format!("SIMPLE({}…)", head.join(" "))
                }
            },
            MockReply::Fixed(text) => text.clone(),
            MockReply::Filler(chars) => filler(*chars),
            MockReply::Empty => String::new(),
        }
    }
}

fn filler(chars: usize) -> String {
    const WORDS: [&str; 8] = ["lorem", "ipsum", "dolor", "sit", "amet", "consectetur", "adipiscing", "elit"];
    let mut out = String::with_capacity(chars);
    let mut i = 0;
    while out.len() < chars {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(WORDS[i % WORDS.len()]);
        i += 1;
    }
    out.truncate(chars);
    out
}

#[async_trait]
impl LlmClient for MockLlm {
    fn model_name(&self) -> &str {
        &self.settings.model
    }

    async fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        if call < self.settings.fail_first {
            return match self.settings.failure {
                MockFailure::Timeout => Err(LlmError::Timeout),
                MockFailure::Transport => Err(LlmError::Transport("mock connection reset".into())),
                MockFailure::Hang => {
                    tokio::time::sleep(Duration::from_secs(24 * 3600)).await;
                    Err(LlmError::Timeout)
                }
            };
        }
        if self.settings.latency_ms > 0 {
            tokio::time::sleep(Duration::from_millis(self.settings.latency_ms)).await;
        }
        Ok(self.reply(req))
    }
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Debug, Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

/// OpenAI-style `/chat/completions` client.
#[derive(Debug, Clone)]
pub struct ChatCompletionClient {
    http: reqwest::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl ChatCompletionClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Result<Self, LlmError> {
        let http = reqwest::Client::builder().build().map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self { http, endpoint: endpoint.into(), model: model.into(), api_key })
    }

    /// Reads the bearer token from `SARA_LLM_API_KEY` when set.
    pub fn from_env(endpoint: impl Into<String>, model: impl Into<String>) -> Result<Self, LlmError> {
        Self::new(endpoint, model, std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()))
    }
}

#[async_trait]
impl LlmClient for ChatCompletionClient {
    fn model_name(&self) -> &str {
        &self.model
    }

    async fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        let body = ChatRequest {
            model: &self.model,
            messages: vec![ChatMessage { role: "system", content: SYSTEM_MESSAGE }, ChatMessage { role: "user", content: &req.prompt }],
            temperature: 0.0,
        };
        let mut call = self.http.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().await.map_err(|e| if e.is_timeout() { LlmError::Timeout } else { LlmError::Transport(e.to_string()) })?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            let snippet: String = text.chars().take(200).collect();
            return Err(LlmError::Transport(format!("HTTP {status}: {snippet}")));
        }
        let parsed: ChatResponse = resp.json().await.map_err(|e| LlmError::Transport(format!("malformed chat completion: {e}")))?;
        Ok(parsed.choices.into_iter().next().and_then(|c| c.message.content).unwrap_or_default())
    }
}

/// Backend selection as it appears in the session config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "client", rename_all = "snake_case")]
pub enum LlmBackend {
    Mock(MockSettings),
    Http { endpoint: String, model: String },
}

impl Default for LlmBackend {
    fn default() -> Self {
        LlmBackend::Mock(MockSettings::default())
    }
}

impl LlmBackend {
    pub fn build(&self) -> Result<Arc<dyn LlmClient>, LlmError> {
        Ok(match self {
            LlmBackend::Mock(settings) => Arc::new(MockLlm::new(settings.clone())),
            LlmBackend::Http { endpoint, model } => Arc::new(ChatCompletionClient::from_env(endpoint.clone(), model.clone())?),
        })
    }
}
