//! WebSocket front end for live sessions. One task per connection; the
//! connection's [`LiveSession`] is only touched by that task.

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use sara_core::session::{LiveContext, LiveSession, ServerMessage};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;
use tokio::net::TcpListener;

pub struct ServerState {
    pub ctx: Arc<LiveContext>,
    pub heartbeat: Duration,
    next_session: AtomicU64,
}

impl ServerState {
    pub fn new(ctx: LiveContext, heartbeat: Duration) -> Arc<Self> {
        Arc::new(Self { ctx: Arc::new(ctx), heartbeat, next_session: AtomicU64::new(1) })
    }
}

pub fn router(state: Arc<ServerState>) -> Router {
    Router::new().route("/ws", get(upgrade)).route("/health", get(|| async { "ok" })).with_state(state)
}

pub async fn serve(listener: TcpListener, state: Arc<ServerState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<Arc<ServerState>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    socket.send(Message::Text(msg.to_json().into())).await.is_ok()
}

async fn connection(mut socket: WebSocket, state: Arc<ServerState>) {
    let id = state.next_session.fetch_add(1, Ordering::Relaxed);
    let mut live = LiveSession::new(state.ctx.clone(), id);
    tracing::info!(session = id, "client connected");
    let mut ticker = tokio::time::interval_at(tokio::time::Instant::now() + state.heartbeat, state.heartbeat);
    loop {
        tokio::select! {
            incoming = socket.recv() => {
                let text = match incoming {
                    Some(Ok(Message::Text(text))) => text,
                    Some(Ok(Message::Binary(_))) => {
                        let fault = sara_core::session::ProtocolFault("binary frames are not supported".into());
                        send(&mut socket, &fault.message()).await;
                        break;
                    }
                    Some(Ok(Message::Ping(_) | Message::Pong(_))) => continue,
                    Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                };
                match live.handle_text(text.as_str()).await {
                    Ok(reply) => {
                        for msg in &reply.messages {
                            if !send(&mut socket, msg).await {
                                break;
                            }
                        }
                        if reply.close {
                            break;
                        }
                    }
                    Err(fault) => {
                        tracing::info!(session = id, error = %fault, "closing connection");
                        send(&mut socket, &fault.message()).await;
                        break;
                    }
                }
            }
            _ = ticker.tick() => {
                if !send(&mut socket, &live.heartbeat()).await {
                    break;
                }
            }
        }
    }
    live.abandon().await;
    let _ = socket.send(Message::Close(None)).await;
    tracing::info!(session = id, "client disconnected");
}
