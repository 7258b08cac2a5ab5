//! WebSocket session server: one session per connection, ticking on a fixed
//! period.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use mclq_core::session::{ClientMessage, ServerMessage, Session, SessionConfig};
use tokio::sync::{mpsc, watch};
use tokio::time::MissedTickBehavior;

#[derive(Clone)]
struct AppState {
    cfg: Arc<SessionConfig>,
    next_id: Arc<std::sync::atomic::AtomicU64>,
}

pub fn router(cfg: SessionConfig) -> Router {
    let state = AppState {
        cfg: Arc::new(cfg),
        next_id: Arc::new(std::sync::atomic::AtomicU64::new(1)),
    };
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/ws", get(upgrade))
        .with_state(state)
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    let id = state.next_id.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    ws.on_upgrade(move |socket| run_session(socket, id, state.cfg))
}

fn encode(msg: &ServerMessage) -> Message {
    Message::Text(serde_json::to_string(msg).unwrap_or_default().into())
}

async fn run_session(socket: WebSocket, id: u64, cfg: Arc<SessionConfig>) {
    let mut session = match Session::new(id, (*cfg).clone()) {
        Ok(s) => Some(s),
        Err(err) => {
            tracing::error!(session = id, error = %err, "cannot open session");
            return;
        }
    };
    tracing::info!(session = id, "session opened");
    let (mut sink, mut stream) = socket.split();
    let (reply_tx, mut reply_rx) = mpsc::channel::<ServerMessage>(64);
    let (state_tx, mut state_rx) = watch::channel::<Option<ServerMessage>>(None);

    // Slow clients only ever see the newest state.
    let writer = tokio::spawn(async move {
        loop {
            let msg = tokio::select! {
                reply = reply_rx.recv() => match reply {
                    Some(m) => m,
                    None => break,
                },
                changed = state_rx.changed() => {
                    if changed.is_err() {
                        break;
                    }
                    match state_rx.borrow_and_update().clone() {
                        Some(m) => m,
                        None => continue,
                    }
                }
            };
            if sink.send(encode(&msg)).await.is_err() {
                break;
            }
        }
    });

    let mut ticker = tokio::time::interval(Duration::from_millis(cfg.tick_ms));
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            _ = ticker.tick() => {
                let Some(mut live) = session.take() else { break };
                let (back, broadcast) = match tokio::task::spawn_blocking(move || {
                    let b = live.tick();
                    (live, b)
                })
                .await
                {
                    Ok(r) => r,
                    Err(err) => {
                        tracing::error!(session = id, error = %err, "tick panicked");
                        break;
                    }
                };
                session = Some(back);
                if state_tx.send(Some(ServerMessage::State(broadcast))).is_err() {
                    break;
                }
            }
            incoming = stream.next() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                let Some(live) = session.as_mut() else { break };
                let reply = match serde_json::from_str::<ClientMessage>(&text) {
                    Ok(msg) => match live.handle(msg) {
                        Ok(ack) => ServerMessage::Ack(ack),
                        Err(err) => ServerMessage::Error { message: err.to_string() },
                    },
                    Err(err) => ServerMessage::Error { message: format!("bad message: {err}") },
                };
                if reply_tx.send(reply).await.is_err() {
                    break;
                }
            }
        }
    }
    drop(reply_tx);
    drop(state_tx);
    let _ = writer.await;
    if let Some(s) = session {
        tracing::info!(
            session = id,
            ticks = s.states().len() - 1,
            collisions = s.collisions(),
            revolutions = s.revolutions(),
            "session closed"
        );
    }
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, cfg: SessionConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(cfg)).await
}
