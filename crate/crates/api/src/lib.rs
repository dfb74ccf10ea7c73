//! JSON-over-HTTP facade for repair sessions, diagnosis, planning and the
//! knowledge base, mounted under `/api/v1`.
//!
//! Sessions live in memory and are lost on restart; export them through
//! `GET /api/v1/sessions/{id}/log`. Every error body is `{"error", "detail"}`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use archmend_core::knowledge::{KbError, KnowledgeBase, Outcome};
use archmend_core::model::{ArchitectureModel, ImplementationModel};
use archmend_core::planner::{PlanError, SearchConfig, Strategy};
use archmend_core::repair::{ActionDoc, RepairAction};
use archmend_core::session::{NodeId, SessionConfig, SessionError, SessionTree};
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{Any, CorsLayer};

#[derive(Debug, Clone, Default)]
pub struct ApiConfig {
    /// Origin allowed by CORS; any origin when unset.
    pub cors_origin: Option<String>,
    pub session: SessionConfig,
}

pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionTree>>>>,
    kb: Mutex<KnowledgeBase>,
    config: ApiConfig,
}

impl AppState {
    pub fn new(kb: KnowledgeBase, config: ApiConfig) -> Arc<Self> {
        Arc::new(Self {
            sessions: RwLock::new(HashMap::new()),
            kb: Mutex::new(kb),
            config,
        })
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<SessionTree>>, ApiError> {
        self.sessions
            .read()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))
    }

    fn kb_snapshot(&self) -> archmend_core::KbSnapshot {
        self.kb.lock().expect("knowledge base lock").snapshot()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    error: &'static str,
    detail: String,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, detail: impl Into<String>) -> Self {
        Self {
            status,
            error,
            detail: detail.into(),
        }
    }

    fn not_found(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", detail)
    }

    fn unprocessable(error: &'static str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, error, detail)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(json!({ "error": self.error, "detail": self.detail }));
        (self.status, body).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let detail = e.to_string();
        match e {
            SessionError::UnknownNode(_) => ApiError::not_found(detail),
            SessionError::Closed => ApiError::new(StatusCode::CONFLICT, "session_closed", detail),
            SessionError::UnknownCandidate(_) => ApiError::unprocessable("unknown_candidate", detail),
            SessionError::NotConsolidated { .. } => ApiError::unprocessable("invalid_outcome", detail),
            SessionError::Repair(_) => ApiError::unprocessable("invalid_action", detail),
            SessionError::Model(_) => ApiError::unprocessable("invalid_model", detail),
            SessionError::Plan(PlanError::Resource { .. }) => ApiError::unprocessable("resource_exhausted", detail),
            SessionError::Plan(_) => ApiError::unprocessable("invalid_search", detail),
            SessionError::Conformance(_) | SessionError::ReplayMismatch { .. } | SessionError::InvalidLog(_) => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", detail)
            }
        }
    }
}

impl From<KbError> for ApiError {
    fn from(e: KbError) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "knowledge_base", e.to_string())
    }
}

/// Parses a JSON body, reporting failures as 422 with the standard error body.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::unprocessable("invalid_body", e.to_string()))
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    architecture: ArchitectureModel,
    implementation: ImplementationModel,
    system_id: String,
}

async fn create_session(State(app): State<Arc<AppState>>, bytes: Bytes) -> ApiResult<Response> {
    let req: CreateSession = body(&bytes)?;
    let tree = SessionTree::create(
        req.architecture,
        req.implementation,
        &req.system_id,
        app.config.session.clone(),
    )?;
    let doc = json!({
        "session_id": tree.session_id,
        "root": tree.cursor_node(),
        "notice": tree.notice,
    });
    app.sessions
        .write()
        .expect("session table lock")
        .insert(tree.session_id.clone(), Arc::new(Mutex::new(tree)));
    Ok((StatusCode::CREATED, Json(doc)).into_response())
}

#[derive(Serialize)]
struct TreeView<'a> {
    session_id: &'a str,
    system_id: &'a str,
    cursor: NodeId,
    outcome: archmend_core::session::SessionOutcome,
    selected_cause: Option<&'a str>,
    nodes: &'a [archmend_core::session::SessionNode],
}

async fn get_tree(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let session = app.session(&id)?;
    let t = session.lock().expect("session lock");
    let view = TreeView {
        session_id: &t.session_id,
        system_id: &t.system_id,
        cursor: t.cursor,
        outcome: t.outcome,
        selected_cause: t.selected_cause.as_ref().map(|c| c.pattern.signature.as_str()),
        nodes: &t.nodes,
    };
    Ok(Json(serde_json::to_value(view).expect("tree view serializes")))
}

async fn get_log(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let session = app.session(&id)?;
    let t = session.lock().expect("session lock");
    Ok(Json(serde_json::to_value(&*t).expect("session serializes")))
}

async fn get_violations(
    State(app): State<Arc<AppState>>,
    Path((id, node)): Path<(String, NodeId)>,
) -> ApiResult<Json<Value>> {
    let session = app.session(&id)?;
    let t = session.lock().expect("session lock");
    let vs = t.violations_at(node)?;
    Ok(Json(serde_json::to_value(vs).expect("violations serialize")))
}

async fn get_causes(
    State(app): State<Arc<AppState>>,
    Path((id, node)): Path<(String, NodeId)>,
) -> ApiResult<Json<Value>> {
    let session = app.session(&id)?;
    let kb = app.kb_snapshot();
    let t = session.lock().expect("session lock");
    let candidates = t.candidates_at(node, &kb)?;
    Ok(Json(serde_json::to_value(candidates).expect("candidates serialize")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectCause {
    candidate_id: u32,
}

async fn post_cause(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    bytes: Bytes,
) -> ApiResult<Json<Value>> {
    let req: SelectCause = body(&bytes)?;
    let session = app.session(&id)?;
    let kb = app.kb_snapshot();
    let mut t = session.lock().expect("session lock");
    let chosen = t.select_cause(req.candidate_id, &kb)?.clone();
    Ok(Json(json!({ "selected_cause": chosen })))
}

#[derive(Deserialize)]
struct PlanQuery {
    strategy: Option<String>,
    width: Option<usize>,
    depth: Option<usize>,
}

async fn get_plans(
    State(app): State<Arc<AppState>>,
    Path((id, node)): Path<(String, NodeId)>,
    Query(q): Query<PlanQuery>,
) -> ApiResult<Json<Value>> {
    let strategy: Strategy = match q.strategy.as_deref() {
        None | Some("") => Strategy::Beam,
        Some(s) => s.parse().map_err(|e: String| ApiError::unprocessable("invalid_query", e))?,
    };
    let session = app.session(&id)?;
    let kb = app.kb_snapshot();
    let t = session.lock().expect("session lock");
    let mut search: SearchConfig = t.config.search.clone();
    if let Some(w) = q.width {
        search.beam_width = w;
    }
    if let Some(d) = q.depth {
        search.max_depth = d;
    }
    let plans = t.recommend(node, strategy, &search, &kb)?;
    Ok(Json(serde_json::to_value(plans).expect("plans serialize")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ApplyStep {
    action: ActionDoc,
}

async fn post_step(State(app): State<Arc<AppState>>, Path(id): Path<String>, bytes: Bytes) -> ApiResult<Response> {
    let req: ApplyStep = body(&bytes)?;
    let action = RepairAction::try_from(req.action)
        .map_err(|e| ApiError::unprocessable("invalid_action", e.to_string()))?;
    let session = app.session(&id)?;
    let mut t = session.lock().expect("session lock");
    let node = t.apply_step(&action)?;
    let doc = serde_json::to_value(t.node(node)?).expect("node serializes");
    Ok((StatusCode::CREATED, Json(doc)).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MoveCursor {
    node_id: NodeId,
}

async fn post_cursor(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    bytes: Bytes,
) -> ApiResult<Json<Value>> {
    let req: MoveCursor = body(&bytes)?;
    let session = app.session(&id)?;
    let mut t = session.lock().expect("session lock");
    t.goto(req.node_id)?;
    Ok(Json(json!({ "cursor": t.cursor })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Finish {
    outcome: Outcome,
}

async fn post_finish(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    bytes: Bytes,
) -> ApiResult<Json<Value>> {
    let req: Finish = body(&bytes)?;
    let session = app.session(&id)?;
    let mut t = session.lock().expect("session lock");
    // validate against a copy so a failed append leaves the session open
    let mut closed = t.clone();
    let events = closed.finish(req.outcome)?;
    app.kb.lock().expect("knowledge base lock").record(&events)?;
    *t = closed;
    Ok(Json(json!({ "outcome": t.outcome, "events": events })))
}

async fn get_kb_stats(State(app): State<Arc<AppState>>) -> Json<Value> {
    Json(serde_json::to_value(app.kb_snapshot().stats()).expect("stats serialize"))
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = match &state.config.cors_origin {
        Some(origin) => match HeaderValue::from_str(origin) {
            Ok(value) => CorsLayer::new().allow_origin(value),
            Err(_) => CorsLayer::new(),
        },
        None => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any);

    Router::new()
        .route("/api/v1/sessions", post(create_session))
        .route("/api/v1/sessions/{id}/tree", get(get_tree))
        .route("/api/v1/sessions/{id}/log", get(get_log))
        .route("/api/v1/sessions/{id}/nodes/{n}/violations", get(get_violations))
        .route("/api/v1/sessions/{id}/nodes/{n}/causes", get(get_causes))
        .route("/api/v1/sessions/{id}/nodes/{n}/plans", get(get_plans))
        .route("/api/v1/sessions/{id}/cause", post(post_cause))
        .route("/api/v1/sessions/{id}/steps", post(post_step))
        .route("/api/v1/sessions/{id}/cursor", post(post_cursor))
        .route("/api/v1/sessions/{id}/finish", post(post_finish))
        .route("/api/v1/kb/stats", get(get_kb_stats))
        .fallback(fallback)
        .layer(cors)
        .with_state(state)
}

/// Opens the knowledge base in `kb_dir` and serves until interrupted.
pub async fn serve(addr: SocketAddr, kb_dir: PathBuf, config: ApiConfig) -> std::io::Result<()> {
    let kb = KnowledgeBase::open(&kb_dir).map_err(std::io::Error::other)?;
    let app = router(AppState::new(kb, config));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
