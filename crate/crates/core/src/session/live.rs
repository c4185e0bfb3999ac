//! Live message protocol. Transport-agnostic: the server feeds text frames
//! into [`LiveSession::handle_text`] and sends back what it returns.
//!
//! Client → server messages carry a `type` tag (`init`, `gaze`, `gaze_ray`,
//! `prefs`, `reask`, `dismiss`, `end`). Server → client messages are either
//! event envelopes (they carry `seq`) or control messages (`ready`,
//! `heartbeat`, `protocol_error`).

use super::{
    EventEnvelope, EventLog, GazeMode, GazeRecord, PixelGazeRecord, RayGazeRecord, Session, SessionConfig, SessionError, SessionParams,
};
use crate::assist::{AssistanceMode, Assistant, UserPrefs};
use crate::classifier::Anchor;
use crate::layout::{LayoutConfig, LayoutDocument, TextLayout};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Init {
        /// Inline layout document.
        #[serde(default)]
        layout: Option<LayoutDocument>,
        /// Name of a layout known to the server.
        #[serde(default)]
        layout_ref: Option<String>,
        #[serde(default)]
        prefs: Option<UserPrefs>,
        #[serde(default)]
        gaze_mode: GazeMode,
    },
    Gaze(PixelGazeRecord),
    GazeRay(RayGazeRecord),
    Prefs {
        prefs: UserPrefs,
    },
    Reask {
        anchor: Anchor,
        #[serde(default)]
        mode: Option<AssistanceMode>,
    },
    Dismiss {
        anchor: Anchor,
    },
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControlMessage {
    Ready { session_id: u64, words: usize, lines: usize, paragraphs: usize },
    Heartbeat { session_id: u64, next_seq: u64 },
    ProtocolError { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ServerMessage {
    Envelope(EventEnvelope),
    Control(ControlMessage),
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

/// A client broke the protocol; the connection should be closed after
/// sending [`ProtocolFault::message`].
#[derive(Debug, Clone, Error, PartialEq)]
#[error("protocol error: {0}")]
pub struct ProtocolFault(pub String);

impl ProtocolFault {
    pub fn message(&self) -> ServerMessage {
        ServerMessage::Control(ControlMessage::ProtocolError { message: self.0.clone() })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LiveReply {
    pub messages: Vec<ServerMessage>,
    /// The session ended normally; close the connection after sending.
    pub close: bool,
}

/// What every live session shares: loaded layouts, defaults and the model.
#[derive(Debug, Clone)]
pub struct LiveContext {
    pub layouts: BTreeMap<String, Arc<TextLayout>>,
    pub default_layout: Option<Arc<TextLayout>>,
    pub layout_config: LayoutConfig,
    pub params: SessionParams,
    pub assistant: Assistant,
    pub log_dir: Option<PathBuf>,
}

impl LiveContext {
    pub fn from_config(cfg: &SessionConfig) -> Result<Self, SessionError> {
        cfg.validate()?;
        Ok(Self {
            layouts: cfg.load_named_layouts()?,
            default_layout: Some(Arc::new(cfg.load_layout()?)),
            layout_config: cfg.layout_config,
            params: cfg.params()?,
            assistant: cfg.build_assistant()?,
            log_dir: cfg.log_dir.clone(),
        })
    }
}

struct Active {
    session: Session,
    mode: GazeMode,
    log: Option<EventLog>,
}

pub struct LiveSession {
    ctx: Arc<LiveContext>,
    session_id: u64,
    active: Option<Active>,
}

fn fault(message: impl Into<String>) -> ProtocolFault {
    ProtocolFault(message.into())
}

fn session_fault(err: SessionError) -> ProtocolFault {
    fault(err.to_string())
}

impl LiveSession {
    pub fn new(ctx: Arc<LiveContext>, session_id: u64) -> Self {
        Self { ctx, session_id, active: None }
    }

    pub fn session_id(&self) -> u64 {
        self.session_id
    }

    pub fn is_initialized(&self) -> bool {
        self.active.is_some()
    }

    pub fn heartbeat(&self) -> ServerMessage {
        let next_seq = self.active.as_ref().map_or(0, |a| a.session.next_seq());
        ServerMessage::Control(ControlMessage::Heartbeat { session_id: self.session_id, next_seq })
    }

    pub async fn handle_text(&mut self, text: &str) -> Result<LiveReply, ProtocolFault> {
        let msg: ClientMessage = serde_json::from_str(text).map_err(|e| fault(format!("malformed message: {e}")))?;
        self.handle(msg).await
    }

    pub async fn handle(&mut self, msg: ClientMessage) -> Result<LiveReply, ProtocolFault> {
        if let ClientMessage::Init { layout, layout_ref, prefs, gaze_mode } = msg {
            return self.init(layout, layout_ref, prefs, gaze_mode);
        }
        let active = self.active.as_mut().ok_or_else(|| fault("first message must be `init`"))?;
        if active.session.is_ended() {
            return Err(fault("session already ended"));
        }
        let mut close = false;
        let envelopes = match msg {
            ClientMessage::Init { .. } => unreachable!(),
            ClientMessage::Gaze(r) => {
                if active.mode != GazeMode::Pixel {
                    return Err(fault("session expects `gaze_ray` messages"));
                }
                active.session.push_record(&GazeRecord::Pixel(r)).await.map_err(session_fault)?
            }
            ClientMessage::GazeRay(r) => {
                if active.mode != GazeMode::Ray {
                    return Err(fault("session expects `gaze` messages"));
                }
                active.session.push_record(&GazeRecord::Ray(r)).await.map_err(session_fault)?
            }
            ClientMessage::Prefs { prefs } => {
                active.session.set_prefs(prefs).map_err(session_fault)?;
                Vec::new()
            }
            ClientMessage::Reask { anchor, mode } => active.session.reask(anchor, mode).await.map_err(session_fault)?,
            ClientMessage::Dismiss { anchor } => {
                active.session.dismiss(anchor);
                Vec::new()
            }
            ClientMessage::End => {
                close = true;
                active.session.finish().await.map_err(session_fault)?
            }
        };
        if let Some(log) = active.log.as_mut() {
            if let Err(e) = log.append(&envelopes) {
                tracing::warn!(session = self.session_id, error = %e, "event log write failed; logging disabled");
                active.log = None;
            }
        }
        Ok(LiveReply { messages: envelopes.into_iter().map(ServerMessage::Envelope).collect(), close })
    }

    fn init(
        &mut self,
        doc: Option<LayoutDocument>,
        layout_ref: Option<String>,
        prefs: Option<UserPrefs>,
        mode: GazeMode,
    ) -> Result<LiveReply, ProtocolFault> {
        if self.active.is_some() {
            return Err(fault("session already initialized"));
        }
        let layout = match (doc, layout_ref) {
            (Some(_), Some(_)) => return Err(fault("give either `layout` or `layout_ref`, not both")),
            (Some(doc), None) => {
                Arc::new(TextLayout::from_document(&doc, &self.ctx.layout_config).map_err(|e| fault(format!("layout: {e}")))?)
            }
            (None, Some(name)) => self.ctx.layouts.get(&name).cloned().ok_or_else(|| fault(format!("unknown layout `{name}`")))?,
            (None, None) => self.ctx.default_layout.clone().ok_or_else(|| fault("no layout given and no default configured"))?,
        };
        let mut params = self.ctx.params.clone();
        if let Some(prefs) = prefs {
            params.prefs = prefs;
        }
        if mode == GazeMode::Ray && params.geometry.is_none() {
            return Err(fault("ray-mode gaze needs a server-side screen pose"));
        }
        let session = Session::new(layout.clone(), params, self.ctx.assistant.clone()).map_err(session_fault)?;
        let log = match &self.ctx.log_dir {
            Some(dir) => match EventLog::create(&dir.join(format!("session-{:04}.jsonl", self.session_id))) {
                Ok(log) => Some(log),
                Err(e) => {
                    tracing::warn!(session = self.session_id, error = %e, "cannot open event log");
                    None
                }
            },
            None => None,
        };
        self.active = Some(Active { session, mode, log });
        let ready = ControlMessage::Ready {
            session_id: self.session_id,
            words: layout.word_count(),
            lines: layout.lines.len(),
            paragraphs: layout.paragraphs.len(),
        };
        Ok(LiveReply { messages: vec![ServerMessage::Control(ready)], close: false })
    }

    /// Connection dropped: end the session if it is still running so the log
    /// gets its closing record.
    pub async fn abandon(&mut self) {
        if let Some(active) = self.active.as_mut().filter(|a| !a.session.is_ended()) {
            if let Ok(batch) = active.session.finish().await {
                if let Some(log) = active.log.as_mut() {
                    let _ = log.append(&batch);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::tests::assistant;
    use crate::session::Payload;
    use crate::sim;

    fn ctx() -> Arc<LiveContext> {
        let doc = sim::sample_layout_document();
        let layout = Arc::new(TextLayout::from_document(&doc, &LayoutConfig::default()).unwrap());
        Arc::new(LiveContext {
            layouts: [("sample".to_string(), layout)].into(),
            default_layout: None,
            layout_config: LayoutConfig::default(),
            params: SessionParams::default(),
            assistant: assistant(),
            log_dir: None,
        })
    }

    #[test]
    fn message_shapes() {
        let m: ClientMessage = serde_json::from_str(r#"{"type":"gaze","t":5,"x":1,"y":2}"#).unwrap();
        assert_eq!(m, ClientMessage::Gaze(PixelGazeRecord { t: 5.0, x: Some(1.0), y: Some(2.0), valid: true }));
        let m: ClientMessage = serde_json::from_str(r#"{"type":"reask","anchor":{"word":3},"mode":"translation"}"#).unwrap();
        assert_eq!(m, ClientMessage::Reask { anchor: Anchor::Word(3), mode: Some(AssistanceMode::Translation) });
        let m: ClientMessage = serde_json::from_str(r#"{"type":"init","layout_ref":"a"}"#).unwrap();
        assert!(matches!(m, ClientMessage::Init { gaze_mode: GazeMode::Pixel, .. }));
        assert!(serde_json::from_str::<ClientMessage>(r#"{"type":"gaze","t":5,"x":1,"y":2,"extra":0}"#).is_err());

        let hb = ServerMessage::Control(ControlMessage::Heartbeat { session_id: 1, next_seq: 0 });
        assert_eq!(hb.to_json(), r#"{"type":"heartbeat","session_id":1,"next_seq":0}"#);
        assert_eq!(serde_json::from_str::<ServerMessage>(&hb.to_json()).unwrap(), hb);
        let env = ServerMessage::Envelope(EventEnvelope {
            seq: 0,
            t: 1.0,
            payload: Payload::GazeAccepted { x_px: Some(1.0), y_px: Some(2.0), valid: true },
        });
        assert_eq!(serde_json::from_str::<ServerMessage>(&env.to_json()).unwrap(), env);
    }

    #[tokio::test]
    async fn protocol_flow() {
        let mut live = LiveSession::new(ctx(), 9);
        assert!(live.handle_text(r#"{"type":"gaze","t":0,"x":1,"y":1}"#).await.is_err());
        assert!(live.handle_text("{not json").await.is_err());
        assert!(live.handle_text(r#"{"type":"init","layout_ref":"nope"}"#).await.is_err());
        assert!(live.handle_text(r#"{"type":"init"}"#).await.is_err());

        let ready = live.handle_text(r#"{"type":"init","layout_ref":"sample"}"#).await.unwrap();
        assert!(matches!(ready.messages[0], ServerMessage::Control(ControlMessage::Ready { session_id: 9, paragraphs: 4, .. })));
        assert!(live.handle_text(r#"{"type":"init","layout_ref":"sample"}"#).await.is_err());

        let r = live.handle_text(r#"{"type":"gaze","t":0,"x":1,"y":1}"#).await.unwrap();
        assert_eq!(r.messages.len(), 1);
        assert!(live.handle_text(r#"{"type":"gaze","t":0,"x":1,"y":1}"#).await.is_err());
        assert!(live.handle_text(r#"{"type":"gaze_ray","t":1,"ox":0,"oy":0,"oz":0,"dx":0,"dy":0,"dz":1}"#).await.is_err());
        assert!(live.handle_text(r#"{"type":"prefs","prefs":{"assistance_mode":"translation"}}"#).await.is_err());
        live.handle_text(r#"{"type":"dismiss","anchor":{"paragraph":0}}"#).await.unwrap();
        assert!(matches!(live.heartbeat(), ServerMessage::Control(ControlMessage::Heartbeat { next_seq: 1, .. })));

        let end = live.handle_text(r#"{"type":"end"}"#).await.unwrap();
        assert!(end.close);
        assert!(matches!(&end.messages.last().unwrap(), ServerMessage::Envelope(EventEnvelope { payload: Payload::SessionEnded(_), .. })));
        assert!(live.handle_text(r#"{"type":"gaze","t":50,"x":1,"y":1}"#).await.is_err());
    }

    #[tokio::test]
    async fn inline_layout_init() {
        let mut live = LiveSession::new(ctx(), 1);
        let doc = sim::typeset(&["one two three"], &sim::TypesetStyle::default());
        let msg = serde_json::json!({"type": "init", "layout": doc, "prefs": {"assistance_mode": "auto", "target_language": "fr"}});
        let r = live.handle_text(&msg.to_string()).await.unwrap();
        assert!(matches!(r.messages[0], ServerMessage::Control(ControlMessage::Ready { words: 3, .. })));
    }
}
