use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Result, ServiceError};
use crate::session::{CreateSession, RunState, Session, SessionView};
use crate::ServiceOptions;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    options: ServiceOptions,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    counter: AtomicU64,
}

impl AppState {
    pub fn new(options: ServiceOptions) -> Self {
        Self { inner: Arc::new(Inner { options, sessions: RwLock::default(), counter: AtomicU64::new(0) }) }
    }

    fn session(&self, id: &str) -> Result<Arc<Session>> {
        self.inner
            .sessions
            .read()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_owned()))
    }

    fn fresh_id(&self) -> String {
        let n = self.inner.counter.fetch_add(1, Ordering::Relaxed);
        let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos());
        let digest = Sha256::digest(format!("{n}:{nanos}").as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(view))
        .route("/sessions/{id}/config", put(update_config))
        .route("/sessions/{id}/state", put(set_state))
        .route("/sessions/{id}/samples", post(push_samples))
        .route("/sessions/{id}/end", post(end_input))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/events", get(events))
        .with_state(state)
}

async fn create(State(app): State<AppState>, Json(req): Json<CreateSession>) -> Result<impl IntoResponse> {
    let id = app.fresh_id();
    let session = Session::start(id.clone(), req, &app.inner.options.data_dir).await?;
    app.inner.sessions.write().expect("registry lock").insert(id.clone(), session);
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))))
}

async fn list(State(app): State<AppState>) -> Json<Vec<SessionView>> {
    let sessions: Vec<_> = app.inner.sessions.read().expect("registry lock").values().cloned().collect();
    let mut views: Vec<_> = sessions.iter().map(|s| s.view()).collect();
    views.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    Json(views)
}

async fn view(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>> {
    Ok(Json(app.session(&id)?.view()))
}

async fn update_config(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(patch): Json<serde_json::Map<String, serde_json::Value>>,
) -> Result<impl IntoResponse> {
    let ack = app.session(&id)?.update_config(patch).await?;
    tracing::info!(session = %id, version = ack.applied_version, from = ack.effective_from_window, "config accepted");
    Ok(Json(ack))
}

#[derive(Deserialize)]
struct StateBody {
    state: RunState,
}

async fn set_state(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<StateBody>,
) -> Result<impl IntoResponse> {
    let state = app.session(&id)?.set_state(body.state).await?;
    Ok(Json(json!({ "state": state })))
}

#[derive(Deserialize)]
struct SamplesBody {
    /// Channel-major blocks of equal length.
    samples: Vec<Vec<i16>>,
}

async fn push_samples(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<SamplesBody>,
) -> Result<impl IntoResponse> {
    let n = app.session(&id)?.push(body.samples).await?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "accepted_samples": n }))))
}

async fn end_input(State(app): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse> {
    app.session(&id)?.end_input()?;
    Ok(StatusCode::ACCEPTED)
}

async fn export(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response> {
    let bundle = app.session(&id)?.export().await?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bundle.to_bytes()).into_response())
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    from_seq: usize,
}

async fn events(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    ws: WebSocketUpgrade,
) -> Result<Response> {
    let session = app.session(&id)?;
    Ok(ws.on_upgrade(move |socket| stream_events(socket, session, q.from_seq)))
}

/// Sends every published record from `seq` on, in order, then an end marker
/// once the session has ended and the subscriber has caught up.
async fn stream_events(mut socket: WebSocket, session: Arc<Session>, mut seq: usize) {
    let mut notify = session.shared.notify.subscribe();
    let hello = json!({ "session_id": session.id, "config": session.shared.config(), "next_seq": seq });
    if socket.send(Message::Text(hello.to_string().into())).await.is_err() {
        return;
    }
    loop {
        notify.borrow_and_update();
        let (batch, ended) = {
            let log = session.shared.log.read().expect("log lock");
            (log.lines.get(seq..).unwrap_or_default().to_vec(), log.ended)
        };
        for line in batch {
            if socket.send(Message::Text(line.into())).await.is_err() {
                return;
            }
            seq += 1;
        }
        if ended {
            let end = json!({ "end_of_session": true, "session_id": session.id, "next_seq": seq });
            let _ = socket.send(Message::Text(end.to_string().into())).await;
            let _ = socket.send(Message::Close(None)).await;
            return;
        }
        tokio::select! {
            changed = notify.changed() => if changed.is_err() { return },
            msg = socket.recv() => match msg {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
