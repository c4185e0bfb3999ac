//! End-to-end pipeline: gaze samples in, event envelopes out.

mod analyze;
mod config;
mod input;
mod live;
mod replay;

pub use analyze::{analyze_log, analyze_str, AnalysisReport, HistogramBin, SessionSummary};
pub use config::{GazeInput, GazeMode, GeometryConfig, LlmSettings, SessionConfig, SessionParams};
pub use input::{parse_gaze_line, read_gaze_file, GazeRecord, PixelGazeRecord, RayGazeRecord};
pub use live::{ClientMessage, ControlMessage, LiveContext, LiveReply, LiveSession, ProtocolFault, ServerMessage};
pub use replay::{read_envelopes, run_replay, run_replay_records, EventLog, ReplayOutput};

use crate::assist::{AssistError, AssistRequest, AssistanceCard, AssistanceMode, Assistant, CardKind, DispatchRegistry, UserPrefs};
use crate::classifier::{Anchor, DifficultyEvent, OnlineClassifier};
use crate::gaze::{assign_fixation, Fixation, FixationDetector, GazeError, GazeSample, WordHit};
use crate::geometry::GeometryError;
use crate::layout::{LayoutError, TextLayout};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("layout {path}: {source}")]
    Layout { path: PathBuf, source: LayoutError },
    #[error("gaze input {path}, line {line}: {message}")]
    GazeInput { path: PathBuf, line: usize, message: String },
    #[error("gaze sample: {0}")]
    Gaze(#[from] GazeError),
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("session already ended")]
    Ended,
}

impl SessionError {
    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        SessionError::Io { path: path.into(), message: err.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEnvelope {
    pub seq: u64,
    pub t: f64,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Payload {
    GazeAccepted { x_px: Option<f64>, y_px: Option<f64>, valid: bool },
    FixationEnded(Fixation),
    WordHit(WordHit),
    DifficultyDetected(DifficultyEvent),
    AssistRequested { card_id: String, anchor: Anchor, kind: CardKind, prompt: String },
    AssistDelivered(AssistanceCard),
    AssistFailed { card_id: String, failure: AssistError },
    SessionEnded(SessionStats),
}

impl Payload {
    pub fn type_name(&self) -> &'static str {
        match self {
            Payload::GazeAccepted { .. } => "GazeAccepted",
            Payload::FixationEnded(_) => "FixationEnded",
            Payload::WordHit(_) => "WordHit",
            Payload::DifficultyDetected(_) => "DifficultyDetected",
            Payload::AssistRequested { .. } => "AssistRequested",
            Payload::AssistDelivered(_) => "AssistDelivered",
            Payload::AssistFailed { .. } => "AssistFailed",
            Payload::SessionEnded(_) => "SessionEnded",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub samples: usize,
    pub invalid_samples: usize,
    pub fixations: usize,
    pub word_hits: usize,
    pub off_text_hits: usize,
    pub regressions: usize,
    pub events: BTreeMap<String, usize>,
    pub assist_requested: usize,
    pub cards_delivered: usize,
    pub assist_failed: usize,
}

/// One reader on one layout. Single writer: every input goes through `&mut self`
/// and the envelopes it produces are returned in order.
#[derive(Debug)]
pub struct Session {
    layout: Arc<TextLayout>,
    params: SessionParams,
    prefs: UserPrefs,
    detector: FixationDetector,
    classifier: OnlineClassifier,
    registry: DispatchRegistry,
    assistant: Assistant,
    last_events: BTreeMap<Anchor, DifficultyEvent>,
    stats: SessionStats,
    seq: u64,
    last_t: Option<f64>,
    next_card: u64,
    ended: bool,
}

impl Session {
    pub fn new(layout: Arc<TextLayout>, params: SessionParams, assistant: Assistant) -> Result<Self, SessionError> {
        params.validate(&layout)?;
        let classifier = OnlineClassifier::new(layout.clone(), params.classifier).map_err(|e| SessionError::Config(e.to_string()))?;
        Ok(Self {
            detector: FixationDetector::new(params.fixation),
            classifier,
            prefs: params.prefs.clone(),
            layout,
            params,
            registry: DispatchRegistry::new(),
            assistant,
            last_events: BTreeMap::new(),
            stats: SessionStats::default(),
            seq: 0,
            last_t: None,
            next_card: 0,
            ended: false,
        })
    }

    pub fn layout(&self) -> &Arc<TextLayout> {
        &self.layout
    }

    pub fn params(&self) -> &SessionParams {
        &self.params
    }

    pub fn prefs(&self) -> &UserPrefs {
        &self.prefs
    }

    pub fn stats(&self) -> &SessionStats {
        &self.stats
    }

    pub fn next_seq(&self) -> u64 {
        self.seq
    }

    pub fn last_t(&self) -> Option<f64> {
        self.last_t
    }

    pub fn is_ended(&self) -> bool {
        self.ended
    }

    pub fn set_prefs(&mut self, prefs: UserPrefs) -> Result<(), SessionError> {
        prefs.validate().map_err(SessionError::Config)?;
        self.prefs = prefs;
        Ok(())
    }

    /// Converts an input record to a sample, projecting rays through the
    /// configured screen pose. Rays that miss the screen plane become invalid
    /// samples.
    pub fn sample_from_record(&self, record: &GazeRecord) -> Result<GazeSample, SessionError> {
        input::record_to_sample(record, self.params.geometry.as_ref())
    }

    fn envelope(&mut self, t: f64, payload: Payload, out: &mut Vec<EventEnvelope>) {
        out.push(EventEnvelope { seq: self.seq, t, payload });
        self.seq += 1;
    }

    pub async fn push_record(&mut self, record: &GazeRecord) -> Result<Vec<EventEnvelope>, SessionError> {
        let sample = self.sample_from_record(record)?;
        self.push_sample(sample).await
    }

    /// Feeds one sample. Everything it triggers, including assistance
    /// requests, is resolved before returning and stamped with the sample's t.
    pub async fn push_sample(&mut self, sample: GazeSample) -> Result<Vec<EventEnvelope>, SessionError> {
        if self.ended {
            return Err(SessionError::Ended);
        }
        let closed = self.detector.push(sample)?;
        self.last_t = Some(sample.t);
        self.stats.samples += 1;
        let valid = sample.valid && sample.p.is_finite();
        if !valid {
            self.stats.invalid_samples += 1;
        }
        let mut out = Vec::new();
        let (x_px, y_px) = if valid { (Some(sample.p.x_px), Some(sample.p.y_px)) } else { (None, None) };
        self.envelope(sample.t, Payload::GazeAccepted { x_px, y_px, valid }, &mut out);
        if let Some(fixation) = closed {
            self.on_fixation(fixation, sample.t, &mut out).await;
        }
        Ok(out)
    }

    async fn on_fixation(&mut self, fixation: Fixation, t: f64, out: &mut Vec<EventEnvelope>) {
        self.stats.fixations += 1;
        let hit = assign_fixation(&fixation, &self.layout, self.params.slack_px);
        self.envelope(t, Payload::FixationEnded(fixation), out);
        if hit.word.is_some() {
            self.stats.word_hits += 1;
        } else {
            self.stats.off_text_hits += 1;
        }
        self.envelope(t, Payload::WordHit(hit), out);
        let events = self.classifier.push(&hit);
        self.stats.regressions = self.classifier.regression_count();
        let mut requests = Vec::new();
        for event in events {
            *self.stats.events.entry(event.kind.label().to_string()).or_insert(0) += 1;
            self.envelope(t, Payload::DifficultyDetected(event), out);
            let anchor = event.kind.anchor();
            self.last_events.insert(anchor, event);
            if self.registry.should_dispatch(anchor, t, self.params.classifier.cooldown_ms) {
                if let Some(req) = self.prepare(event, None, t, out) {
                    requests.push(req);
                }
            }
        }
        self.dispatch(requests, t, out).await;
    }

    fn prepare(
        &mut self,
        event: DifficultyEvent,
        mode: Option<AssistanceMode>,
        t: f64,
        out: &mut Vec<EventEnvelope>,
    ) -> Option<(String, AssistRequest)> {
        let anchor = event.kind.anchor();
        let card_id = format!("card-{}", self.next_card);
        self.next_card += 1;
        let mut prefs = self.prefs.clone();
        if let Some(mode) = mode {
            prefs.assistance_mode = mode;
        }
        let prepared = AssistRequest::from_event(event, &self.layout, prefs).and_then(|req| {
            req.validate()?;
            let prompt = self.assistant.prompt(&req)?;
            Ok((req, prompt))
        });
        match prepared {
            Ok((req, prompt)) => {
                self.registry.begin(anchor);
                self.stats.assist_requested += 1;
                self.envelope(t, Payload::AssistRequested { card_id: card_id.clone(), anchor, kind: req.card_kind(), prompt }, out);
                Some((card_id, req))
            }
            Err(failure) => {
                self.stats.assist_failed += 1;
                self.envelope(t, Payload::AssistFailed { card_id, failure }, out);
                None
            }
        }
    }

    async fn dispatch(&mut self, requests: Vec<(String, AssistRequest)>, t: f64, out: &mut Vec<EventEnvelope>) {
        if requests.is_empty() {
            return;
        }
        let assistant = &self.assistant;
        let results = futures::future::join_all(requests.iter().map(|(card_id, req)| assistant.request(req, card_id.clone(), t))).await;
        for ((card_id, req), result) in requests.into_iter().zip(results) {
            let anchor = req.anchor();
            match result {
                Ok(card) => {
                    self.registry.complete(anchor, Some(t));
                    self.stats.cards_delivered += 1;
                    self.envelope(t, Payload::AssistDelivered(card), out);
                }
                Err(failure) => {
                    self.registry.complete(anchor, None);
                    self.stats.assist_failed += 1;
                    self.envelope(t, Payload::AssistFailed { card_id, failure }, out);
                }
            }
        }
    }

    /// Asks again for an anchor that was flagged earlier, optionally with a
    /// different assistance mode. Ignores the cooldown but not a request
    /// already in flight.
    pub async fn reask(&mut self, anchor: Anchor, mode: Option<AssistanceMode>) -> Result<Vec<EventEnvelope>, SessionError> {
        if self.ended {
            return Err(SessionError::Ended);
        }
        let t = self.last_t.unwrap_or(0.0);
        let mut out = Vec::new();
        let Some(event) = self.last_events.get(&anchor).copied() else {
            let card_id = format!("card-{}", self.next_card);
            self.next_card += 1;
            self.stats.assist_failed += 1;
            let failure = AssistError::InvalidRequest { anchor, reason: "no difficulty was detected for this anchor".into() };
            self.envelope(t, Payload::AssistFailed { card_id, failure }, &mut out);
            return Ok(out);
        };
        if self.registry.should_dispatch(anchor, f64::INFINITY, 0.0) {
            if let Some(req) = self.prepare(event, mode, t, &mut out) {
                self.dispatch(vec![req], t, &mut out).await;
            }
        }
        Ok(out)
    }

    /// Reader closed the card; restarts the anchor's cooldown.
    pub fn dismiss(&mut self, anchor: Anchor) {
        self.registry.dismiss(anchor, self.last_t.unwrap_or(0.0));
    }

    /// Flushes any open fixation and emits `SessionEnded`.
    pub async fn finish(&mut self) -> Result<Vec<EventEnvelope>, SessionError> {
        if self.ended {
            return Err(SessionError::Ended);
        }
        let t = self.last_t.unwrap_or(0.0);
        let mut out = Vec::new();
        if let Some(fixation) = self.detector.finish() {
            self.on_fixation(fixation, t, &mut out).await;
        }
        self.ended = true;
        let stats = self.stats.clone();
        self.envelope(t, Payload::SessionEnded(stats), &mut out);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assist::{MockLlm, PromptTemplates, RetryPolicy};
    use crate::classifier::{DifficultyKind, Evidence};
    use crate::layout::LayoutConfig;
    use crate::sim;

    pub(crate) fn assistant() -> Assistant {
        Assistant::new(Arc::new(MockLlm::echo()), PromptTemplates::default(), RetryPolicy::default(), 2)
    }

    fn layout() -> Arc<TextLayout> {
        Arc::new(TextLayout::from_document(&sim::sample_layout_document(), &LayoutConfig::default()).unwrap())
    }

    /// 100 Hz samples fixating word centres for the given durations.
    fn read(layout: &TextLayout, script: &[(usize, f64)]) -> Vec<GazeSample> {
        let mut t = 0.0;
        let mut out = Vec::new();
        for &(ordinal, dur) in script {
            let c = layout.words[layout.reading_order()[ordinal]].bbox.center();
            let end = t + dur;
            while t <= end {
                out.push(GazeSample::new(t, c.x_px, c.y_px));
                t += 10.0;
            }
            t += 20.0;
        }
        out
    }

    async fn run(session: &mut Session, samples: &[GazeSample]) -> Vec<EventEnvelope> {
        let mut out = Vec::new();
        for s in samples {
            out.extend(session.push_sample(*s).await.unwrap());
        }
        out.extend(session.finish().await.unwrap());
        out
    }

    #[test]
    fn envelope_json_shape() {
        let env = EventEnvelope {
            seq: 4,
            t: 1200.0,
            payload: Payload::DifficultyDetected(DifficultyEvent {
                kind: DifficultyKind::UnfamiliarWord { word_id: 7 },
                t: 1190.0,
                evidence: Evidence::Dwell { observed_ms: 900.0, baseline_ms: 200.0, ratio: 4.5 },
                confidence: 0.75,
            }),
        };
        let json = serde_json::to_string(&env).unwrap();
        assert!(
            json.starts_with(
                r#"{"seq":4,"t":1200.0,"payload":{"type":"DifficultyDetected","kind":"UnfamiliarWord","word_id":7,"t":1190.0"#
            ),
            "{json}"
        );
        assert_eq!(serde_json::from_str::<EventEnvelope>(&json).unwrap(), env);

        let gaze = EventEnvelope { seq: 0, t: 0.0, payload: Payload::GazeAccepted { x_px: None, y_px: None, valid: false } };
        let json = serde_json::to_string(&gaze).unwrap();
        assert_eq!(serde_json::from_str::<EventEnvelope>(&json).unwrap(), gaze);
    }

    #[tokio::test]
    async fn long_dwell_yields_event_and_card() {
        let l = layout();
        let mut session = Session::new(l.clone(), SessionParams::default(), assistant()).unwrap();
        let mut script: Vec<(usize, f64)> = (0..12).map(|o| (o, 200.0)).collect();
        script[8].1 = 900.0;
        let out = run(&mut session, &read(&l, &script)).await;

        assert!(out.windows(2).all(|w| w[1].seq == w[0].seq + 1 && w[1].t >= w[0].t));
        let kinds: Vec<&str> =
            out.iter().map(|e| e.payload.type_name()).filter(|k| !matches!(*k, "GazeAccepted" | "FixationEnded" | "WordHit")).collect();
        assert_eq!(kinds, ["DifficultyDetected", "AssistRequested", "AssistDelivered", "SessionEnded"]);
        let card = out.iter().find_map(|e| match &e.payload {
            Payload::AssistDelivered(c) => Some(c.clone()),
            _ => None,
        });
        let word = &l.words[l.reading_order()[8]].text;
        assert_eq!(card.unwrap().content, format!("DEF({})", word.trim_matches(|c: char| !c.is_alphanumeric())));
        let Payload::SessionEnded(stats) = &out.last().unwrap().payload else { panic!() };
        assert_eq!(stats.fixations, 12);
        assert_eq!(stats.events["UnfamiliarWord"], 1);
        assert_eq!(stats.cards_delivered, 1);
    }

    #[tokio::test]
    async fn reask_and_dismiss() {
        let l = layout();
        let mut session = Session::new(l.clone(), SessionParams::default(), assistant()).unwrap();
        let mut script: Vec<(usize, f64)> = (0..12).map(|o| (o, 200.0)).collect();
        script[8].1 = 900.0;
        for s in read(&l, &script) {
            session.push_sample(s).await.unwrap();
        }
        let anchor = Anchor::Word(l.reading_order()[8]);
        session.set_prefs(UserPrefs { target_language: Some("de".into()), ..Default::default() }).unwrap();
        let again = session.reask(anchor, Some(AssistanceMode::Translation)).await.unwrap();
        let Payload::AssistDelivered(card) = &again.last().unwrap().payload else { panic!("{again:?}") };
        assert_eq!(card.kind, CardKind::Translation);
        assert!(card.content.starts_with("TRANS[de]("));

        let unknown = session.reask(Anchor::Word(0), None).await.unwrap();
        assert!(matches!(unknown[0].payload, Payload::AssistFailed { failure: AssistError::InvalidRequest { .. }, .. }));
        session.dismiss(anchor);
        assert!(session.set_prefs(UserPrefs { max_card_chars: 5, ..Default::default() }).is_err());
    }

    #[tokio::test]
    async fn rejects_time_going_backwards_and_use_after_end() {
        let mut session = Session::new(layout(), SessionParams::default(), assistant()).unwrap();
        session.push_sample(GazeSample::new(10.0, 1.0, 1.0)).await.unwrap();
        assert!(matches!(session.push_sample(GazeSample::new(10.0, 1.0, 1.0)).await, Err(SessionError::Gaze(_))));
        session.finish().await.unwrap();
        assert!(matches!(session.push_sample(GazeSample::new(20.0, 1.0, 1.0)).await, Err(SessionError::Ended)));
    }
}
