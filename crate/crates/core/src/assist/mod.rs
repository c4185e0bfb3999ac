//! Reading support: prompts, model calls and assistance cards.
//!
//! A [`DifficultyEvent`] becomes an [`AssistRequest`] (anchor text plus
//! context), the request is rendered through the prompt templates, sent to an
//! [`LlmClient`] under a [`RetryPolicy`], and the reply is wrapped in an
//! [`AssistanceCard`] capped at the reader's preferred length.

pub mod client;
pub mod prompt;

pub use client::{ChatCompletionClient, CompletionRequest, LlmBackend, LlmClient, LlmError, MockFailure, MockLlm, MockReply, MockSettings};
pub use prompt::{build_prompt, PromptTemplates, TemplateError};

use crate::classifier::{Anchor, DifficultyEvent, DifficultyKind};
use crate::layout::TextLayout;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;
use tokio::sync::Semaphore;

pub const ELLIPSIS: char = '…';
pub const MIN_CARD_CHARS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssistanceMode {
    Definition,
    Translation,
    /// Translation when the word's script differs from the target language's,
    /// otherwise a definition.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UserPrefs {
    pub assistance_mode: AssistanceMode,
    pub target_language: Option<String>,
    pub max_card_chars: usize,
}

impl Default for UserPrefs {
    fn default() -> Self {
        Self { assistance_mode: AssistanceMode::Definition, target_language: None, max_card_chars: 300 }
    }
}

impl UserPrefs {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_card_chars < MIN_CARD_CHARS {
            return Err(format!("max_card_chars must be at least {MIN_CARD_CHARS}"));
        }
        let has_language = self.target_language.as_deref().is_some_and(|l| !l.trim().is_empty());
        if self.assistance_mode == AssistanceMode::Translation && !has_language {
            return Err("translation mode requires target_language".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CardKind {
    Definition,
    Translation,
    Simplification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistRequest {
    pub event: DifficultyEvent,
    pub anchor_text: String,
    pub context: String,
    pub prefs: UserPrefs,
}

fn strip_punctuation(token: &str) -> &str {
    let trimmed = token.trim_matches(|c: char| !c.is_alphanumeric());
    if trimmed.is_empty() {
        token
    } else {
        trimmed
    }
}

impl AssistRequest {
    /// Word events get the word (without surrounding punctuation) and its
    /// sentence; paragraph events get the paragraph text as both.
    pub fn from_event(event: DifficultyEvent, layout: &TextLayout, prefs: UserPrefs) -> Result<Self, AssistError> {
        let anchor = event.kind.anchor();
        let missing = || AssistError::InvalidRequest { anchor, reason: "anchor is not in the layout".into() };
        let (anchor_text, context) = match event.kind {
            DifficultyKind::UnfamiliarWord { word_id } => {
                let word = layout.word(word_id).ok_or_else(missing)?;
                let window = layout.context_window(word_id, 0).map_err(|_| missing())?;
                (strip_punctuation(&word.text).to_string(), window.sentence)
            }
            DifficultyKind::ParagraphComprehension { paragraph_id } => {
                let text = layout.paragraph_text(paragraph_id).ok_or_else(missing)?;
                (text.clone(), text)
            }
        };
        Ok(Self { event, anchor_text, context, prefs })
    }

    pub fn anchor(&self) -> Anchor {
        self.event.kind.anchor()
    }

    pub fn validate(&self) -> Result<(), AssistError> {
        let invalid = |reason: &str| AssistError::InvalidRequest { anchor: self.anchor(), reason: reason.into() };
        if self.anchor_text.trim().is_empty() || self.context.trim().is_empty() {
            return Err(invalid("anchor text and context must be non-empty"));
        }
        if matches!(self.event.kind, DifficultyKind::UnfamiliarWord { .. }) && !self.context.contains(&self.anchor_text) {
            return Err(invalid("context does not contain the anchor word"));
        }
        self.prefs.validate().map_err(|e| invalid(&e))
    }

    /// Card kind after resolving `Auto`. Paragraph events always simplify.
    pub fn card_kind(&self) -> CardKind {
        if matches!(self.event.kind, DifficultyKind::ParagraphComprehension { .. }) {
            return CardKind::Simplification;
        }
        match self.prefs.assistance_mode {
            AssistanceMode::Definition => CardKind::Definition,
            AssistanceMode::Translation => CardKind::Translation,
            AssistanceMode::Auto => match self.prefs.target_language.as_deref() {
                Some(lang) if prompt::script_differs(&self.anchor_text, lang) => CardKind::Translation,
                _ => CardKind::Definition,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistanceCard {
    pub card_id: String,
    pub anchor: Anchor,
    pub kind: CardKind,
    pub content: String,
    pub source_model: String,
    pub t_created: f64,
}

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum AssistError {
    #[error("invalid assistance request for {anchor:?}: {reason}")]
    InvalidRequest { anchor: Anchor, reason: String },
    #[error("model timed out for {anchor:?} after {attempts} attempt(s)")]
    Timeout { anchor: Anchor, attempts: u32 },
    #[error("model returned an empty reply for {anchor:?}")]
    EmptyResponse { anchor: Anchor },
    #[error("transport failure for {anchor:?}: {message}")]
    Transport { anchor: Anchor, message: String },
}

impl AssistError {
    pub fn anchor(&self) -> Anchor {
        match self {
            AssistError::InvalidRequest { anchor, .. }
            | AssistError::Timeout { anchor, .. }
            | AssistError::EmptyResponse { anchor }
            | AssistError::Transport { anchor, .. } => *anchor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Per-attempt timeout.
    pub timeout_ms: u64,
    /// Additional attempts after the first one.
    pub max_retries: u32,
    /// Delay before the first retry; doubled for each further retry.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { timeout_ms: 15_000, max_retries: 2, backoff_ms: 250 }
    }
}

/// Trims `text` and caps it at `max_chars` characters, cutting at the last
/// word boundary and appending an ellipsis when it has to cut.
pub fn truncate_at_word_boundary(text: &str, max_chars: usize) -> String {
    let text = text.trim();
    if text.chars().count() <= max_chars {
        return text.to_string();
    }
    let budget = max_chars.saturating_sub(1);
    let prefix: String = text.chars().take(budget).collect();
    // Cutting right before whitespace keeps the last word whole.
    let next_is_space = text.chars().nth(budget).is_some_and(char::is_whitespace);
    let cut = if next_is_space {
        prefix.trim_end()
    } else {
        match prefix.rfind(char::is_whitespace) {
            Some(i) if !prefix[..i].trim().is_empty() => prefix[..i].trim_end(),
            _ => prefix.as_str(),
        }
    };
    let mut out = cut.to_string();
    out.push(ELLIPSIS);
    out
}

/// Builds the prompt, calls the model with retries, and wraps the reply.
pub async fn request_assistance(
    req: &AssistRequest,
    client: &dyn LlmClient,
    templates: &PromptTemplates,
    policy: &RetryPolicy,
    card_id: String,
    t_created: f64,
) -> Result<AssistanceCard, AssistError> {
    let prompt = templates.render(req)?;
    let reply = complete_with_retry(req, &prompt, client, policy).await?;
    let content = truncate_at_word_boundary(&reply, req.prefs.max_card_chars);
    if content.is_empty() {
        return Err(AssistError::EmptyResponse { anchor: req.anchor() });
    }
    Ok(AssistanceCard {
        card_id,
        anchor: req.anchor(),
        kind: req.card_kind(),
        content,
        source_model: client.model_name().to_string(),
        t_created,
    })
}

async fn complete_with_retry(
    req: &AssistRequest,
    prompt: &str,
    client: &dyn LlmClient,
    policy: &RetryPolicy,
) -> Result<String, AssistError> {
    let call = CompletionRequest {
        kind: req.card_kind(),
        prompt: prompt.to_string(),
        anchor_text: req.anchor_text.clone(),
        target_language: req.prefs.target_language.clone(),
    };
    let anchor = req.anchor();
    let mut attempt = 0u32;
    loop {
        attempt += 1;
        let outcome =
            tokio::time::timeout(Duration::from_millis(policy.timeout_ms), client.complete(&call)).await.unwrap_or(Err(LlmError::Timeout));
        let err = match outcome {
            Ok(text) => return Ok(text),
            Err(e) => e,
        };
        tracing::debug!(?anchor, attempt, error = %err, "model call failed");
        if attempt > policy.max_retries {
            return Err(match err {
                LlmError::Timeout => AssistError::Timeout { anchor, attempts: attempt },
                LlmError::Transport(message) => AssistError::Transport { anchor, message },
            });
        }
        let backoff = policy.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
        if backoff > 0 {
            tokio::time::sleep(Duration::from_millis(backoff)).await;
        }
    }
}

/// Per-session record of delivered cards and requests in flight.
#[derive(Debug, Clone, Default)]
pub struct DispatchRegistry {
    delivered: BTreeMap<Anchor, f64>,
    in_flight: BTreeSet<Anchor>,
}

impl DispatchRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// False when a card for `anchor` was delivered less than `cooldown_ms`
    /// before `t`, or a request for it is still in flight.
    pub fn should_dispatch(&self, anchor: Anchor, t: f64, cooldown_ms: f64) -> bool {
        if self.in_flight.contains(&anchor) {
            return false;
        }
        self.delivered.get(&anchor).is_none_or(|&t0| t - t0 >= cooldown_ms)
    }

    /// Marks a request in flight; false if one already was.
    pub fn begin(&mut self, anchor: Anchor) -> bool {
        self.in_flight.insert(anchor)
    }

    /// Clears the in-flight mark; a delivered card starts the cooldown.
    pub fn complete(&mut self, anchor: Anchor, delivered_at: Option<f64>) {
        self.in_flight.remove(&anchor);
        if let Some(t) = delivered_at {
            self.delivered.insert(anchor, t);
        }
    }

    /// Reader dismissed the card; treat as a fresh delivery for cooldown.
    pub fn dismiss(&mut self, anchor: Anchor, t: f64) {
        self.delivered.insert(anchor, t);
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }
}

/// Model access shared by all sessions: the client, templates, retry policy
/// and the cap on concurrent requests.
#[derive(Clone)]
pub struct Assistant {
    client: Arc<dyn LlmClient>,
    templates: Arc<PromptTemplates>,
    policy: RetryPolicy,
    permits: Arc<Semaphore>,
}

impl std::fmt::Debug for Assistant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Assistant")
            .field("model", &self.client.model_name())
            .field("policy", &self.policy)
            .field("available_permits", &self.permits.available_permits())
            .finish()
    }
}

impl Assistant {
    pub fn new(client: Arc<dyn LlmClient>, templates: PromptTemplates, policy: RetryPolicy, max_in_flight: usize) -> Self {
        Self { client, templates: Arc::new(templates), policy, permits: Arc::new(Semaphore::new(max_in_flight.max(1))) }
    }

    pub fn model_name(&self) -> &str {
        self.client.model_name()
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    pub fn prompt(&self, req: &AssistRequest) -> Result<String, AssistError> {
        self.templates.render(req)
    }

    /// Runs one request once a concurrency permit is available.
    pub async fn request(&self, req: &AssistRequest, card_id: String, t_created: f64) -> Result<AssistanceCard, AssistError> {
        let _permit = self.permits.acquire().await.expect("semaphore is never closed");
        request_assistance(req, self.client.as_ref(), &self.templates, &self.policy, card_id, t_created).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Evidence;

    fn event(word_id: usize) -> DifficultyEvent {
        DifficultyEvent {
            kind: DifficultyKind::UnfamiliarWord { word_id },
            t: 1000.0,
            evidence: Evidence::Dwell { observed_ms: 900.0, baseline_ms: 200.0, ratio: 4.5 },
            confidence: 0.75,
        }
    }

    fn req(max_card_chars: usize) -> AssistRequest {
        AssistRequest {
            event: event(3),
            anchor_text: "ubiquitous".into(),
            context: "Phones are ubiquitous now.".into(),
            prefs: UserPrefs { max_card_chars, ..Default::default() },
        }
    }

    fn fast_policy(max_retries: u32) -> RetryPolicy {
        RetryPolicy { timeout_ms: 50, max_retries, backoff_ms: 0 }
    }

    #[test]
    fn truncation_rules() {
        assert_eq!(truncate_at_word_boundary("  short  ", 40), "short");
        let cut = truncate_at_word_boundary("alpha beta gamma delta", 12);
        assert_eq!(cut, "alpha beta…");
        assert!(cut.chars().count() <= 12);
        assert_eq!(truncate_at_word_boundary("alpha beta gamma", 11), "alpha beta…");
        assert_eq!(truncate_at_word_boundary("abcdefghijklmnop", 8), "abcdefg…");
    }

    #[tokio::test]
    async fn echo_card() {
        let client = MockLlm::echo();
        let card = request_assistance(&req(300), &client, &PromptTemplates::default(), &fast_policy(0), "c0".into(), 5.0).await.unwrap();
        assert_eq!(card.content, "DEF(ubiquitous)");
        assert_eq!(card.anchor, Anchor::Word(3));
        assert_eq!(card.kind, CardKind::Definition);
        assert_eq!(card.source_model, "mock-echo");
        assert_eq!(card.t_created, 5.0);
    }

    #[tokio::test]
    async fn long_reply_is_truncated_at_word_boundary() {
        let client = MockLlm::new(MockSettings { reply: MockReply::Filler(10_000), ..Default::default() });
        let card = request_assistance(&req(300), &client, &PromptTemplates::default(), &fast_policy(0), "c".into(), 0.0).await.unwrap();
        assert!(card.content.chars().count() <= 300);
        assert!(card.content.ends_with(ELLIPSIS));
        let body = card.content.trim_end_matches(ELLIPSIS);
        let full = client::MockLlm::new(MockSettings { reply: MockReply::Filler(10_000), ..Default::default() });
        let text = full
            .complete(&CompletionRequest {
                kind: CardKind::Definition,
                prompt: String::new(),
                anchor_text: String::new(),
                target_language: None,
            })
            .await
            .unwrap();
        assert!(text.starts_with(body));
        assert_eq!(text[body.len()..].chars().next(), Some(' '));
    }

    #[tokio::test]
    async fn retry_state_machine() {
        for failure in [MockFailure::Timeout, MockFailure::Hang] {
            let flaky = || MockLlm::new(MockSettings { fail_first: 2, failure, ..Default::default() });
            let ok = request_assistance(&req(300), &flaky(), &PromptTemplates::default(), &fast_policy(3), "c".into(), 0.0).await;
            assert_eq!(ok.unwrap().content, "DEF(ubiquitous)");
            let client = flaky();
            let err =
                request_assistance(&req(300), &client, &PromptTemplates::default(), &fast_policy(1), "c".into(), 0.0).await.unwrap_err();
            assert_eq!(err, AssistError::Timeout { anchor: Anchor::Word(3), attempts: 2 });
            assert_eq!(client.calls(), 2);
        }
        let exact = MockLlm::new(MockSettings { fail_first: 2, ..Default::default() });
        assert!(request_assistance(&req(300), &exact, &PromptTemplates::default(), &fast_policy(2), "c".into(), 0.0).await.is_ok());
        assert_eq!(exact.calls(), 3);
    }

    #[tokio::test]
    async fn empty_and_transport_errors_carry_anchor() {
        let empty = MockLlm::new(MockSettings { reply: MockReply::Empty, ..Default::default() });
        let err = request_assistance(&req(300), &empty, &PromptTemplates::default(), &fast_policy(2), "c".into(), 0.0).await.unwrap_err();
        assert_eq!(err, AssistError::EmptyResponse { anchor: Anchor::Word(3) });
        assert_eq!(empty.calls(), 1);

        let broken = MockLlm::new(MockSettings { fail_first: 9, failure: MockFailure::Transport, ..Default::default() });
        let err = request_assistance(&req(300), &broken, &PromptTemplates::default(), &fast_policy(1), "c".into(), 0.0).await.unwrap_err();
        assert!(matches!(err, AssistError::Transport { anchor: Anchor::Word(3), .. }));
    }

    #[test]
    fn dispatch_cooldown_and_in_flight() {
        let mut reg = DispatchRegistry::new();
        let a = Anchor::Word(3);
        assert!(reg.should_dispatch(a, 0.0, 30_000.0));
        assert!(reg.begin(a));
        assert!(!reg.begin(a));
        assert!(!reg.should_dispatch(a, 1.0, 30_000.0));
        reg.complete(a, Some(10_000.0));
        assert!(!reg.should_dispatch(a, 15_000.0, 30_000.0));
        assert!(reg.should_dispatch(a, 41_000.0, 30_000.0));
        assert!(reg.should_dispatch(Anchor::Word(4), 15_000.0, 30_000.0));
        reg.begin(Anchor::Paragraph(0));
        reg.complete(Anchor::Paragraph(0), None);
        assert!(reg.should_dispatch(Anchor::Paragraph(0), 0.0, 30_000.0));
    }

    #[test]
    fn prefs_validation_and_auto_mode() {
        assert!(UserPrefs { max_card_chars: 39, ..Default::default() }.validate().is_err());
        assert!(UserPrefs { assistance_mode: AssistanceMode::Translation, ..Default::default() }.validate().is_err());
        let mut r = req(300);
        r.prefs = UserPrefs { assistance_mode: AssistanceMode::Auto, target_language: Some("de".into()), max_card_chars: 100 };
        assert_eq!(r.card_kind(), CardKind::Definition);
        r.prefs.target_language = Some("ru".into());
        assert_eq!(r.card_kind(), CardKind::Translation);
        r.prefs.target_language = None;
        assert_eq!(r.card_kind(), CardKind::Definition);
    }

    #[tokio::test]
    async fn in_flight_cap_limits_concurrency() {
        let client = Arc::new(MockLlm::new(MockSettings { latency_ms: 40, ..Default::default() }));
        let assistant = Assistant::new(client, PromptTemplates::default(), fast_policy(0).with_timeout(1000), 2);
        let requests: Vec<AssistRequest> = (0..4).map(|_| req(300)).collect();
        let start = tokio::time::Instant::now();
        let cards = futures_join(&assistant, &requests).await;
        assert!(cards.iter().all(|c| c.is_ok()));
        // Four 40 ms calls two at a time take at least two rounds.
        assert!(start.elapsed() >= Duration::from_millis(80));
    }

    async fn futures_join(assistant: &Assistant, requests: &[AssistRequest]) -> Vec<Result<AssistanceCard, AssistError>> {
        let mut set = tokio::task::JoinSet::new();
        for (i, r) in requests.iter().enumerate() {
            let (a, r) = (assistant.clone(), r.clone());
            set.spawn(async move { a.request(&r, format!("c{i}"), 0.0).await });
        }
        set.join_all().await
    }

    impl RetryPolicy {
        fn with_timeout(mut self, ms: u64) -> Self {
            self.timeout_ms = ms;
            self
        }
    }
}
