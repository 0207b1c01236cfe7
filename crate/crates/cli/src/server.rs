//! HTTP API over [`Service`].

use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use sketchforge::mesh::obj::import_obj;
use sketchforge::render::{render_color, CameraPose, RenderConfig, FLAT_GREY};
use uuid::Uuid;

use crate::error::CliError;
use crate::service::{Service, SubmitRequest};

pub const MAX_RENDER_SIZE: usize = 512;

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("{what} not found"))
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        let status = match e {
            CliError::User(_) => StatusCode::BAD_REQUEST,
            CliError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.message())
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs blocking work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/api/v1/healthz", get(healthz))
        .route("/api/v1/jobs", post(submit).get(list_jobs))
        .route("/api/v1/jobs/{id}", get(job_status))
        .route("/api/v1/meshes/{id}", get(mesh))
        .route("/api/v1/previews/{id}", get(preview))
        .route("/api/v1/traces/{id}", get(trace))
        .route("/api/v1/render", get(render))
        .fallback(|| async { ApiError::not_found("route") })
        .with_state(service)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "version": env!("CARGO_PKG_VERSION") }))
}

async fn submit(State(svc): State<Arc<Service>>, body: Bytes) -> ApiResult<Response> {
    let req: SubmitRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed request: {e}")))?;
    let id = blocking(move || svc.submit(req).map_err(ApiError::from)).await?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": id }))).into_response())
}

async fn list_jobs(State(svc): State<Arc<Service>>) -> Json<serde_json::Value> {
    let ids: Vec<Uuid> = svc.jobs().iter().map(|j| j.id).collect();
    Json(json!({ "job_ids": ids }))
}

async fn job_status(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Response> {
    let id = Uuid::parse_str(&id).map_err(|_| ApiError::not_found("job"))?;
    let status = svc.status(&id).ok_or_else(|| ApiError::not_found("job"))?;
    Ok(Json(status).into_response())
}

async fn blob(svc: Arc<Service>, id: String, what: &'static str) -> ApiResult<Vec<u8>> {
    blocking(move || svc.store.get(&id)?.ok_or_else(|| ApiError::not_found(what))).await
}

async fn mesh(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Response> {
    let bytes = blob(svc, id, "mesh").await?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], bytes).into_response())
}

async fn preview(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Response> {
    let bytes = blob(svc, id, "preview").await?;
    if !bytes.starts_with(b"\x89PNG") {
        return Err(ApiError::not_found("preview"));
    }
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn trace(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Response> {
    let bytes = blob(svc, id, "trace").await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

#[derive(Deserialize)]
struct RenderQuery {
    mesh_id: String,
    #[serde(default)]
    azimuth_deg: f64,
    #[serde(default)]
    elevation_deg: f64,
    size: Option<usize>,
}

async fn render(State(svc): State<Arc<Service>>, Query(q): Query<RenderQuery>) -> ApiResult<Response> {
    let png = blocking(move || {
        let bytes = svc.store.get(&q.mesh_id)?.ok_or_else(|| ApiError::not_found("mesh"))?;
        let mesh = import_obj(&bytes).map_err(|e| ApiError::from(CliError::from(e)))?;
        let pose = CameraPose::at(q.azimuth_deg, q.elevation_deg).map_err(|e| ApiError::from(CliError::from(e)))?;
        let size = q.size.unwrap_or(svc.config.render.width);
        if size == 0 || size > MAX_RENDER_SIZE {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("size must lie in 1..={MAX_RENDER_SIZE}")));
        }
        let mesh = if mesh.colors.is_some() { mesh } else { mesh.with_uniform_color([FLAT_GREY; 3]) };
        let cfg = RenderConfig { width: size, height: size, ..svc.config.render };
        render_color(&mesh, &pose, &cfg)
            .and_then(|img| img.to_png())
            .map_err(|e| ApiError::from(CliError::from(e)))
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

/// Serves until `shutdown` resolves, then stops the workers after their current job.
pub async fn serve(
    listener: tokio::net::TcpListener,
    service: Arc<Service>,
    workers: crate::service::Workers,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(service.clone());
    let result = axum::serve(listener, app).with_graceful_shutdown(shutdown).await;
    service.close();
    tokio::task::spawn_blocking(move || workers.join()).await.map_err(std::io::Error::other)?;
    result
}
