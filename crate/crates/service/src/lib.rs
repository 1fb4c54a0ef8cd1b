//! HTTP/JSON front end for weighing sessions.

pub mod error;
pub mod render;
pub mod session;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use fanout_core::{Catalog, WeighingStrategy, DEFAULT_TOLERANCE};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::RwLock;
use uuid::Uuid;

pub use error::{ServiceError, ServiceResult};
pub use render::{GraphRender, NodeRole};
pub use session::{Preview, Session, SessionRequest, SessionSnapshot, SessionState, SessionSummary};

#[derive(Debug, Clone)]
pub struct Config {
    pub sample_n: usize,
    pub tolerance: f64,
    /// Sessions are written here after every change when set.
    pub snapshot_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config { sample_n: 100, tolerance: DEFAULT_TOLERANCE, snapshot_dir: None }
    }
}

type SessionCell = Arc<RwLock<Session>>;

#[derive(Default)]
pub struct AppState {
    pub config: Config,
    graphs: RwLock<BTreeMap<String, Arc<Catalog>>>,
    sessions: RwLock<HashMap<Uuid, SessionCell>>,
}

impl AppState {
    pub fn new(config: Config) -> Self {
        AppState { config, ..Default::default() }
    }

    pub async fn add_graph(&self, id: &str, catalog: Catalog) {
        self.graphs.write().await.insert(id.to_string(), Arc::new(catalog));
    }

    pub async fn graph(&self, id: &str) -> ServiceResult<Arc<Catalog>> {
        self.graphs.read().await.get(id).cloned().ok_or_else(|| ServiceError::GraphNotFound(id.to_string()))
    }

    async fn session(&self, id: &str) -> ServiceResult<SessionCell> {
        let uuid = Uuid::parse_str(id).map_err(|_| ServiceError::SessionNotFound(id.to_string()))?;
        self.sessions.read().await.get(&uuid).cloned().ok_or_else(|| ServiceError::SessionNotFound(id.to_string()))
    }

    pub async fn create_session(&self, request: SessionRequest) -> ServiceResult<SessionSummary> {
        let catalog = self.graph(&request.graph_id).await?;
        let session = Session::new(Uuid::new_v4(), request, &catalog, self.config.tolerance)?;
        let summary = session.summary(&catalog)?;
        self.persist(&session)?;
        self.sessions.write().await.insert(session.id, Arc::new(RwLock::new(session)));
        Ok(summary)
    }

    pub async fn snapshots(&self) -> Vec<SessionSnapshot> {
        let cells: Vec<SessionCell> = self.sessions.read().await.values().cloned().collect();
        let mut out = Vec::with_capacity(cells.len());
        for c in cells {
            out.push(c.read().await.snapshot());
        }
        out.sort_by_key(|s| s.id);
        out
    }

    pub async fn restore(&self, snapshot: &SessionSnapshot) -> ServiceResult<SessionSummary> {
        let catalog = self.graph(&snapshot.request.graph_id).await?;
        let session = Session::restore(snapshot, &catalog, self.config.tolerance)?;
        let summary = session.summary(&catalog)?;
        self.sessions.write().await.insert(session.id, Arc::new(RwLock::new(session)));
        Ok(summary)
    }

    /// Restores every `*.json` snapshot in `dir`; returns how many loaded.
    pub async fn load_snapshots(&self, dir: &Path) -> ServiceResult<usize> {
        let entries = std::fs::read_dir(dir).map_err(|e| ServiceError::Internal(e.to_string()))?;
        let mut n = 0;
        for entry in entries {
            let path = entry.map_err(|e| ServiceError::Internal(e.to_string()))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| ServiceError::Internal(e.to_string()))?;
            let snap: SessionSnapshot = serde_json::from_str(&text)
                .map_err(|e| ServiceError::BadRequest(format!("{}: {e}", path.display())))?;
            self.restore(&snap).await?;
            n += 1;
        }
        Ok(n)
    }

    fn persist(&self, session: &Session) -> ServiceResult<()> {
        let Some(dir) = &self.config.snapshot_dir else { return Ok(()) };
        let text = serde_json::to_string_pretty(&session.snapshot()).map_err(|e| ServiceError::Internal(e.to_string()))?;
        std::fs::create_dir_all(dir)
            .and_then(|_| std::fs::write(dir.join(format!("{}.json", session.id)), text))
            .map_err(|e| ServiceError::Internal(e.to_string()))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/graphs", post(post_graph))
        .route("/graphs/{id}", get(get_graph))
        .route("/metrics", get(get_metrics))
        .route("/sessions", post(post_session))
        .route("/sessions/restore", post(post_restore))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/preview", post(post_preview))
        .route("/sessions/{id}/commit", post(post_commit))
        .route("/sessions/{id}/view", get(get_view))
        .route("/sessions/{id}/snapshot", get(get_snapshot))
        .with_state(state)
}

type AppResult<T> = ServiceResult<Json<T>>;

#[derive(Debug, Deserialize)]
pub struct GraphUpload {
    pub id: Option<String>,
    pub graph: Value,
    pub semantic: Value,
    /// CSV text keyed by relation name.
    #[serde(default)]
    pub tables: BTreeMap<String, String>,
}

#[derive(Debug, Serialize)]
struct GraphCreated {
    id: String,
    graph: GraphRender,
}

async fn post_graph(State(state): State<Arc<AppState>>, Json(body): Json<GraphUpload>) -> AppResult<GraphCreated> {
    let catalog = Catalog::from_texts(&body.graph.to_string(), &body.semantic.to_string(), &body.tables)?;
    let id = body.id.unwrap_or_else(|| Uuid::new_v4().to_string());
    let graph = render::graph_render(&catalog, &id);
    state.add_graph(&id, catalog).await;
    Ok(Json(GraphCreated { id, graph }))
}

async fn get_graph(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> AppResult<GraphRender> {
    let catalog = state.graph(&id).await?;
    Ok(Json(render::graph_render(&catalog, &id)))
}

#[derive(Debug, Deserialize)]
struct MetricsQuery {
    graph: String,
}

#[derive(Debug, Serialize)]
struct MetricInfo {
    name: String,
    definition: String,
    kind: String,
    base_relations: Vec<String>,
}

async fn get_metrics(State(state): State<Arc<AppState>>, Query(q): Query<MetricsQuery>) -> AppResult<Vec<MetricInfo>> {
    let catalog = state.graph(&q.graph).await?;
    let out = catalog
        .layer
        .metrics
        .iter()
        .map(|m| MetricInfo {
            name: m.name.clone(),
            definition: m.to_string(),
            kind: format!("{:?}", m.kind()),
            base_relations: catalog.layer.base_query(&m.name).map(|b| b.relations).unwrap_or_default(),
        })
        .collect();
    Ok(Json(out))
}

async fn post_session(State(state): State<Arc<AppState>>, Json(body): Json<SessionRequest>) -> AppResult<SessionSummary> {
    Ok(Json(state.create_session(body).await?))
}

async fn post_restore(State(state): State<Arc<AppState>>, Json(body): Json<SessionSnapshot>) -> AppResult<SessionSummary> {
    Ok(Json(state.restore(&body).await?))
}

async fn get_session(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> AppResult<SessionSummary> {
    let cell = state.session(&id).await?;
    let s = cell.read().await;
    let catalog = state.graph(&s.request.graph_id).await?;
    Ok(Json(s.summary(&catalog)?))
}

async fn get_snapshot(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> AppResult<SessionSnapshot> {
    let cell = state.session(&id).await?;
    let s = cell.read().await;
    Ok(Json(s.snapshot()))
}

#[derive(Debug, Deserialize)]
pub struct PreviewRequest {
    pub target: String,
    pub strategy: WeighingStrategy,
    pub sample_n: Option<usize>,
}

async fn post_preview(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<PreviewRequest>,
) -> AppResult<Preview> {
    let cell = state.session(&id).await?;
    let s = cell.read().await;
    let catalog = state.graph(&s.request.graph_id).await?;
    let n = body.sample_n.unwrap_or(state.config.sample_n);
    Ok(Json(s.preview(&catalog, &body.target, &body.strategy, n, state.config.tolerance)?))
}

#[derive(Debug, Deserialize)]
pub struct CommitRequest {
    pub target: String,
    pub strategy: WeighingStrategy,
    #[serde(default, rename = "override")]
    pub override_validation: bool,
    /// Repeating a commit with the same token returns the first response.
    pub request_token: Option<String>,
}

async fn post_commit(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<CommitRequest>,
) -> ServiceResult<Json<Value>> {
    let cell = state.session(&id).await?;
    let mut s = cell.write().await;
    if let Some(reply) = body.request_token.as_ref().and_then(|t| s.replies.get(t)) {
        return Ok(Json(reply.clone()));
    }
    let catalog = state.graph(&s.request.graph_id).await?;
    s.commit(&catalog, &body.target, &body.strategy, body.override_validation, state.config.tolerance)?;
    state.persist(&s)?;
    let reply = serde_json::to_value(s.summary(&catalog)?).map_err(|e| ServiceError::Internal(e.to_string()))?;
    if let Some(t) = body.request_token {
        s.replies.insert(t, reply.clone());
    }
    Ok(Json(reply))
}

#[derive(Debug, Deserialize)]
struct ViewQuery {
    target: Option<String>,
    #[serde(default)]
    offset: usize,
    limit: Option<usize>,
}

async fn get_view(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<ViewQuery>,
) -> AppResult<fanout_core::NestedView> {
    let cell = state.session(&id).await?;
    let s = cell.read().await;
    let catalog = state.graph(&s.request.graph_id).await?;
    let target = match q.target {
        Some(t) => t,
        None => s
            .frontier()
            .map(str::to_string)
            .ok_or_else(|| ServiceError::BadRequest("session is complete; pass `target`".into()))?,
    };
    Ok(Json(s.view(&catalog, &target, q.offset, q.limit.unwrap_or(state.config.sample_n))?))
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(state: Arc<AppState>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
