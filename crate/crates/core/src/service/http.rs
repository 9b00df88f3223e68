//! HTTP and WebSocket front end.
//!
//! | method | path | auth |
//! |---|---|---|
//! | POST | `/sessions` | admin |
//! | GET | `/sessions/{id}` | admin |
//! | POST | `/sessions/{id}/join` | none |
//! | POST | `/sessions/{id}/advance` | admin |
//! | GET | `/sessions/{id}/export?format=csv\|jsonl&table=rounds` | admin |
//! | POST | `/participants/{token}/actions` | token |
//! | GET | `/participants/{token}/view` | token |
//! | GET | `/participants/{token}/stream` | token (WebSocket) |
//!
//! Admin routes expect `Authorization: Bearer <secret>` when the lab has a
//! secret configured.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::runtime::{Action, ClientView};
use super::{ExportFormat, Lab, ServiceError, SessionContent};
use crate::export::Table;
use crate::session::{ParticipantId, SessionConfig};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self {
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServiceError::Unauthorized => (StatusCode::UNAUTHORIZED, "unauthorized"),
            ServiceError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ServiceError::IllegalPhase(_) => (StatusCode::CONFLICT, "illegal_phase"),
            ServiceError::Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
            ServiceError::Config(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_config"),
            ServiceError::Replay(_) | ServiceError::Session(_) | ServiceError::Io(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        let mut body = json!({ "error": kind, "message": self.to_string() });
        if let ServiceError::Config(c) = &self {
            body["fields"] = json!(c.0);
        }
        (status, Json(body)).into_response()
    }
}

type AppResult<T> = Result<T, ServiceError>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub config: SessionConfig,
    #[serde(default)]
    pub content: Option<SessionContent>,
    #[serde(default)]
    pub idempotency_token: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session: String,
    pub participants: u32,
}

#[derive(Debug, Default, Deserialize)]
pub struct JoinRequest {
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JoinResponse {
    pub token: String,
    pub participant: ParticipantId,
    pub view: ClientView,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ActionRequest {
    #[serde(flatten)]
    pub action: Action,
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct AdvanceRequest {
    pub participant: ParticipantId,
}

#[derive(Debug, Deserialize)]
pub struct ExportQuery {
    #[serde(default)]
    pub format: Option<String>,
    #[serde(default)]
    pub table: Option<String>,
}

fn require_admin(lab: &Lab, headers: &HeaderMap) -> AppResult<()> {
    let Some(secret) = lab.admin_secret() else {
        return Ok(());
    };
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if given == Some(secret) {
        Ok(())
    } else {
        Err(ServiceError::Unauthorized)
    }
}

/// Runs a blocking lab call off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> AppResult<T> + Send + 'static) -> AppResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e)))?
}

async fn create(State(lab): State<Arc<Lab>>, headers: HeaderMap, Json(req): Json<CreateRequest>) -> AppResult<impl IntoResponse> {
    require_admin(&lab, &headers)?;
    let participants = req.config.participants;
    let id = blocking(move || lab.create_session(req.config, req.content, req.idempotency_token)).await?;
    Ok((StatusCode::CREATED, Json(CreateResponse { session: id, participants })))
}

async fn status(State(lab): State<Arc<Lab>>, headers: HeaderMap, Path(id): Path<String>) -> AppResult<impl IntoResponse> {
    require_admin(&lab, &headers)?;
    Ok(Json(lab.status(&id)?))
}

async fn join(State(lab): State<Arc<Lab>>, Path(id): Path<String>, body: Option<Json<JoinRequest>>) -> AppResult<Json<JoinResponse>> {
    let label = body.and_then(|b| b.0.label);
    let (token, participant, view) = blocking(move || lab.join(&id, label)).await?;
    Ok(Json(JoinResponse { token, participant, view }))
}

async fn advance(
    State(lab): State<Arc<Lab>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Json(req): Json<AdvanceRequest>,
) -> AppResult<Json<ClientView>> {
    require_admin(&lab, &headers)?;
    Ok(Json(blocking(move || lab.advance(&id, req.participant)).await?))
}

async fn export(
    State(lab): State<Arc<Lab>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> AppResult<Response> {
    require_admin(&lab, &headers)?;
    let format = match q.format.as_deref().unwrap_or("csv") {
        "jsonl" => ExportFormat::Jsonl,
        "csv" => {
            let name = q.table.as_deref().unwrap_or("rounds");
            ExportFormat::Csv(Table::parse(name).ok_or_else(|| ServiceError::Invalid(format!("unknown table {name}")))?)
        }
        other => return Err(ServiceError::Invalid(format!("unknown export format {other}"))),
    };
    let (body, partial) = blocking(move || lab.export(&id, format)).await?;
    let content_type = match format {
        ExportFormat::Jsonl => "application/x-ndjson",
        ExportFormat::Csv(_) => "text/csv",
    };
    let mut resp = body.into_response();
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static(content_type));
    h.insert("x-pricelab-partial", HeaderValue::from_static(if partial { "true" } else { "false" }));
    Ok(resp)
}

async fn act(State(lab): State<Arc<Lab>>, Path(token): Path<String>, Json(req): Json<ActionRequest>) -> AppResult<Json<ClientView>> {
    Ok(Json(blocking(move || lab.submit(&token, req.action, req.idempotency_key)).await?))
}

async fn view(State(lab): State<Arc<Lab>>, Path(token): Path<String>) -> AppResult<Json<ClientView>> {
    Ok(Json(lab.view(&token)?))
}

async fn stream(State(lab): State<Arc<Lab>>, Path(token): Path<String>, ws: WebSocketUpgrade) -> AppResult<Response> {
    // Resolve the token before upgrading so a bad token gets a 404.
    lab.view(&token)?;
    Ok(ws.on_upgrade(move |socket| push_views(lab, token, socket)))
}

/// Sends the current view, then a fresh one after every change. Text
/// frames from the client are treated as actions.
async fn push_views(lab: Arc<Lab>, token: String, mut socket: WebSocket) {
    let Ok((handle, participant, mut rx)) = lab.subscribe(&token) else {
        return;
    };
    let mut last: Option<ClientView> = None;
    loop {
        let current = handle.read(|rt| rt.view(participant));
        if let Ok(v) = current {
            if last.as_ref() != Some(&v) {
                let text = serde_json::to_string(&v).expect("views serialize");
                if socket.send(Message::Text(text.into())).await.is_err() {
                    return;
                }
                last = Some(v);
            }
        }
        tokio::select! {
            changed = rx.changed() => {
                if changed.is_err() {
                    return;
                }
            }
            msg = socket.recv() => {
                match msg {
                    Some(Ok(Message::Text(text))) => {
                        let reply = match serde_json::from_str::<ActionRequest>(&text) {
                            Ok(req) => {
                                let lab = lab.clone();
                                let token = token.clone();
                                blocking(move || lab.submit(&token, req.action, req.idempotency_key)).await.err()
                            }
                            Err(e) => Some(ServiceError::Invalid(e.to_string())),
                        };
                        if let Some(err) = reply {
                            let body = json!({ "error": err.to_string() }).to_string();
                            if socket.send(Message::Text(body.into())).await.is_err() {
                                return;
                            }
                        }
                    }
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                    Some(Ok(_)) => {}
                }
            }
        }
    }
}

pub fn router(lab: Arc<Lab>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(status))
        .route("/sessions/{id}/join", post(join))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/export", get(export))
        .route("/participants/{token}/actions", post(act))
        .route("/participants/{token}/view", get(view))
        .route("/participants/{token}/stream", get(stream))
        .with_state(lab)
}

/// Serves the lab until ctrl-c.
pub async fn serve(lab: Arc<Lab>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(lab))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
