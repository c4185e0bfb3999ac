use futures::{SinkExt, StreamExt};
use sara::server::{serve, ServerState};
use sara_core::session::{run_replay, ControlMessage, EventEnvelope, LiveContext, Payload, ServerMessage, SessionConfig};
use std::path::PathBuf;
use std::time::Duration;
use tokio_tungstenite::connect_async;
use tokio_tungstenite::tungstenite::Message;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

async fn start(heartbeat: Duration) -> String {
    let cfg = SessionConfig::load(&fixtures().join("serve.json")).unwrap();
    let state = ServerState::new(LiveContext::from_config(&cfg).unwrap(), heartbeat);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, state));
    format!("ws://{addr}/ws")
}

async fn replay_payloads(name: &str) -> Vec<EventEnvelope> {
    let mut cfg = SessionConfig::load(&fixtures().join(name).join("session.json")).unwrap();
    cfg.output_log = None;
    run_replay(&cfg).await.unwrap().envelopes
}

fn gaze_messages(name: &str) -> Vec<String> {
    std::fs::read_to_string(fixtures().join(name).join("gaze.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["type"] = "gaze".into();
            v.to_string()
        })
        .collect()
}

/// Runs one scripted client to completion; returns everything it received.
async fn scripted_client(url: String, layout_ref: &str, gaze: Vec<String>) -> Vec<ServerMessage> {
    let (ws, _) = connect_async(url).await.unwrap();
    let (mut tx, mut rx) = ws.split();
    let reader = tokio::spawn(async move {
        let mut got = Vec::new();
        while let Some(Ok(msg)) = rx.next().await {
            match msg {
                Message::Text(t) => got.push(serde_json::from_str::<ServerMessage>(t.as_str()).unwrap()),
                Message::Close(_) => break,
                _ => {}
            }
        }
        got
    });
    let init = serde_json::json!({"type": "init", "layout_ref": layout_ref}).to_string();
    tx.send(Message::text(init)).await.unwrap();
    for g in gaze {
        tx.send(Message::text(g)).await.unwrap();
    }
    tx.send(Message::text(r#"{"type":"end"}"#)).await.unwrap();
    tokio::time::timeout(Duration::from_secs(30), reader).await.unwrap().unwrap()
}

fn envelopes(msgs: &[ServerMessage]) -> Vec<EventEnvelope> {
    msgs.iter()
        .filter_map(|m| match m {
            ServerMessage::Envelope(e) => Some(e.clone()),
            ServerMessage::Control(_) => None,
        })
        .collect()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn live_session_reproduces_replay() {
    let url = start(Duration::from_secs(60)).await;
    let got = scripted_client(url, "hard_word", gaze_messages("hard_word")).await;
    assert!(matches!(got[0], ServerMessage::Control(ControlMessage::Ready { .. })));
    let live = envelopes(&got);
    let replay = replay_payloads("hard_word").await;
    assert_eq!(live.len(), replay.len(), "lengths");
    for (a, b) in live.iter().zip(&replay) {
        assert_eq!(a, b);
    }
    let flagged: Vec<&str> = live
        .iter()
        .filter(|e| matches!(e.payload, Payload::DifficultyDetected(_) | Payload::AssistDelivered(_)))
        .map(|e| e.payload.type_name())
        .collect();
    assert_eq!(flagged, ["DifficultyDetected", "AssistDelivered"]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_clients_are_isolated() {
    let url = start(Duration::from_secs(60)).await;
    let a = tokio::spawn(scripted_client(url.clone(), "hard_word", gaze_messages("hard_word")));
    let b = tokio::spawn(scripted_client(url, "regress_para", gaze_messages("regress_para")));
    let (a, b) = (a.await.unwrap(), b.await.unwrap());
    assert_eq!(envelopes(&a), replay_payloads("hard_word").await);
    assert_eq!(envelopes(&b), replay_payloads("regress_para").await);
}

#[tokio::test]
async fn idle_session_gets_heartbeats_only() {
    let url = start(Duration::from_millis(40)).await;
    let (mut ws, _) = connect_async(url).await.unwrap();
    ws.send(Message::text(r#"{"type":"init","layout_ref":"easy_read"}"#)).await.unwrap();
    let mut got = Vec::new();
    let deadline = tokio::time::Instant::now() + Duration::from_millis(300);
    while let Ok(Some(Ok(Message::Text(t)))) = tokio::time::timeout_at(deadline, ws.next()).await {
        got.push(serde_json::from_str::<ServerMessage>(t.as_str()).unwrap());
    }
    assert!(matches!(got[0], ServerMessage::Control(ControlMessage::Ready { .. })));
    let heartbeats = got.iter().filter(|m| matches!(m, ServerMessage::Control(ControlMessage::Heartbeat { next_seq: 0, .. }))).count();
    assert!(heartbeats >= 2, "{got:?}");
    assert_eq!(heartbeats + 1, got.len());
}

#[tokio::test]
async fn malformed_message_closes_with_protocol_error() {
    let url = start(Duration::from_secs(60)).await;
    let (mut ws, _) = connect_async(url).await.unwrap();
    ws.send(Message::text(r#"{"type":"gaze","t":0,"x":1,"y":2}"#)).await.unwrap();
    let first = ws.next().await.unwrap().unwrap();
    let msg: ServerMessage = serde_json::from_str(first.to_text().unwrap()).unwrap();
    assert!(matches!(msg, ServerMessage::Control(ControlMessage::ProtocolError { .. })));
    match ws.next().await {
        Some(Ok(Message::Close(_))) | None | Some(Err(_)) => {}
        Some(Ok(other)) => panic!("unexpected {other:?}"),
    }
}
