//! JSON HTTP service over a workspace.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Multipart, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{json, Value as JsonValue};
use tokio::sync::{RwLock, Semaphore};
use tower_http::cors::CorsLayer;

use sax_core::causal::CausalView;
use sax_core::discovery::ProcessView;
use sax_core::eventlog::CsvMapping;
use sax_core::graph::ViewKind;
use sax_core::promptsynth::LlmConfig;
use sax_core::xai::XaiView;

use crate::error::ServiceError;
use crate::llm::client_for;
use crate::pipeline::{self, LogFormat, PipelineRequest, PromptRequest};
use crate::workspace::{Workspace, PROMPT_BUNDLE};

pub struct ServerConfig {
    pub llm: LlmConfig,
    pub mock_llm: bool,
    /// Concurrent model calls.
    pub llm_concurrency: usize,
}

struct AppState {
    ws: Workspace,
    /// Single writer per workspace; readers share.
    lock: RwLock<()>,
    llm: LlmConfig,
    mock_llm: bool,
    llm_slots: Semaphore,
}

type Shared = Arc<AppState>;

struct ApiError(ServiceError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.0)).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

type ApiResult = Result<Json<JsonValue>, ApiError>;

fn to_json(v: impl Serialize) -> Json<JsonValue> {
    Json(serde_json::to_value(v).expect("response serializes"))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(ServiceError::new("service", "Internal", e.to_string())))?
        .map_err(ApiError)
}

fn bad_request(stage: &str, msg: impl Into<String>) -> ApiError {
    ApiError(ServiceError::new(stage, "BadRequest", msg))
}

pub fn router(ws: Workspace, cfg: ServerConfig) -> Router {
    let state = Arc::new(AppState {
        ws,
        lock: RwLock::new(()),
        llm: cfg.llm,
        mock_llm: cfg.mock_llm,
        llm_slots: Semaphore::new(cfg.llm_concurrency.max(1)),
    });
    Router::new()
        .route("/health", get(health))
        .route("/views/{kind}", get(view))
        .route("/manifest", get(manifest))
        .route("/logs", post(upload_log))
        .route("/pipeline", post(run_pipeline))
        .route("/prompt", get(last_prompt).post(prompt))
        .route("/ask", post(ask))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

async fn health() -> Json<JsonValue> {
    Json(json!({"status": "ok"}))
}

/// Structured records for drawing a view.
fn view_data(kind: ViewKind, export: &str, g: &sax_core::graph::KnowledgeGraph) -> Result<JsonValue, ServiceError> {
    Ok(match kind {
        ViewKind::Process => {
            let v = ProcessView::from_graph(g).map_err(|e| ServiceError::from_err("views", e))?;
            let edges: Vec<JsonValue> = v
                .ordered_edges()
                .into_iter()
                .map(|(a, b, n)| json!({"from": a, "to": b, "frequency": n}))
                .collect();
            json!({"edges": edges, "start_marker": v.start_marker, "end_marker": v.end_marker})
        }
        ViewKind::Causal => {
            let v = CausalView::from_graph(g).map_err(|e| ServiceError::from_err("views", e))?;
            let edges: Vec<JsonValue> = v
                .edges
                .iter()
                .map(|r| json!({"cause": r.cause, "effect": r.effect, "coefficient": r.coefficient, "boundary": r.boundary}))
                .collect();
            json!({"edges": edges, "order": v.order})
        }
        ViewKind::Xai => {
            let v = XaiView::parse(export).map_err(|e| ServiceError::from_err("views", e))?;
            let feats = |fs: &[(String, f64)]| -> Vec<JsonValue> {
                fs.iter().map(|(f, x)| json!({"feature": f, "importance": x})).collect()
            };
            let acts: Vec<JsonValue> =
                v.per_activity.iter().map(|(a, fs)| json!({"activity": a, "features": feats(fs)})).collect();
            json!({"activities": acts, "case_level": feats(&v.case_level)})
        }
    })
}

async fn view(State(s): State<Shared>, Path(kind): Path<String>) -> ApiResult {
    let kind = ViewKind::parse(&kind).ok_or_else(|| bad_request("views", format!("unknown view {kind:?}")))?;
    let _r = s.lock.read().await;
    let st = s.clone();
    let body = blocking(move || {
        let g = st.ws.load_graph()?;
        let export = pipeline::view_export(&g, kind)?;
        let data = view_data(kind, &export, &g)?;
        Ok(json!({"kind": kind.as_str(), "export": export, "data": data}))
    })
    .await?;
    Ok(Json(body))
}

async fn manifest(State(s): State<Shared>) -> ApiResult {
    let _r = s.lock.read().await;
    Ok(to_json(s.ws.manifest()?))
}

/// Multipart upload: a `file` part with the log (CSV, or XES when the file name ends in
/// `.xes`) and an optional `mapping` part holding CSV column mapping JSON.
async fn upload_log(State(s): State<Shared>, mut form: Multipart) -> ApiResult {
    let mut file: Option<(Vec<u8>, LogFormat)> = None;
    let mut mapping = CsvMapping::default();
    while let Some(field) = form.next_field().await.map_err(|e| bad_request("ingest", e.to_string()))? {
        match field.name() {
            Some("file") => {
                let format = field.file_name().map_or(LogFormat::Csv, |n| LogFormat::from_path(std::path::Path::new(n)));
                let bytes = field.bytes().await.map_err(|e| bad_request("ingest", e.to_string()))?;
                file = Some((bytes.to_vec(), format));
            }
            Some("mapping") => {
                let text = field.text().await.map_err(|e| bad_request("ingest", e.to_string()))?;
                mapping = serde_json::from_str(&text).map_err(|e| bad_request("ingest", e.to_string()))?;
            }
            _ => {}
        }
    }
    let (bytes, format) = file.ok_or_else(|| bad_request("ingest", "multipart field `file` missing"))?;
    let _w = s.lock.write().await;
    let st = s.clone();
    let summary = blocking(move || {
        let log = pipeline::parse_log(&bytes, format, &mapping)?;
        pipeline::ingest(&st.ws, &log)
    })
    .await?;
    Ok(to_json(summary))
}

async fn run_pipeline(State(s): State<Shared>, Json(req): Json<PipelineRequest>) -> ApiResult {
    let _w = s.lock.write().await;
    let _slot = if req.ask { Some(s.llm_slots.acquire().await.expect("semaphore open")) } else { None };
    let st = s.clone();
    let summary = blocking(move || {
        let client = if req.ask { Some(client_for(&st.llm, st.mock_llm)?) } else { None };
        let llm = client.as_deref().map(|c| (&st.llm, c));
        pipeline::run_pipeline(&st.ws, &req, llm)
    })
    .await?;
    Ok(to_json(summary))
}

async fn prompt(State(s): State<Shared>, Json(req): Json<PromptRequest>) -> ApiResult {
    let _w = s.lock.write().await;
    let st = s.clone();
    Ok(to_json(blocking(move || pipeline::prompt_stage(&st.ws, &req)).await?))
}

async fn last_prompt(State(s): State<Shared>) -> ApiResult {
    let _r = s.lock.read().await;
    let text = s.ws.read(PROMPT_BUNDLE)?;
    Ok(Json(serde_json::from_str(&text).map_err(|e| ServiceError::new("prompt", "CorruptArtifact", e.to_string()))?))
}

async fn ask(State(s): State<Shared>, Json(req): Json<PromptRequest>) -> ApiResult {
    let _slot = s.llm_slots.acquire().await.expect("semaphore open");
    let _w = s.lock.write().await;
    let st = s.clone();
    let out = blocking(move || {
        let client = client_for(&st.llm, st.mock_llm)?;
        pipeline::ask_stage(&st.ws, &req, &st.llm, client.as_ref())
    })
    .await?;
    Ok(to_json(out))
}

/// Binds and serves until `shutdown` resolves.
pub async fn serve(
    ws: Workspace,
    cfg: ServerConfig,
    bind: &str,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
    bound: impl FnOnce(SocketAddr),
) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| ServiceError::new("serve", "BindFailure", format!("{bind}: {e}")))?;
    let addr = listener.local_addr().map_err(|e| ServiceError::new("serve", "BindFailure", e.to_string()))?;
    bound(addr);
    axum::serve(listener, router(ws, cfg))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| ServiceError::new("serve", "Internal", e.to_string()))
}

/// Runs the service on a background thread with its own runtime; for tests and embedding.
pub fn spawn(ws: Workspace, cfg: ServerConfig, bind: &str) -> Result<ServerHandle, ServiceError> {
    let (addr_tx, addr_rx) = std::sync::mpsc::channel();
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let bind = bind.to_string();
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("runtime");
        let done = rt.block_on(serve(
            ws,
            cfg,
            &bind,
            async {
                let _ = stop_rx.await;
            },
            |a| {
                let _ = addr_tx.send(Ok(a));
            },
        ));
        if let Err(e) = &done {
            let _ = addr_tx.send(Err(e.clone()));
        }
        done
    });
    let addr = addr_rx
        .recv()
        .map_err(|_| ServiceError::new("serve", "Internal", "server thread exited"))??;
    Ok(ServerHandle { addr, stop: Some(stop_tx), thread: Some(thread) })
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<Result<(), ServiceError>>>,
}

impl ServerHandle {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    pub fn shutdown(mut self) -> Result<(), ServiceError> {
        self.stop_and_join()
    }

    fn stop_and_join(&mut self) -> Result<(), ServiceError> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(ServiceError::new("serve", "Internal", "server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop_and_join();
    }
}
