//! HTTP+JSON routes over [`Service`].

use std::sync::Arc;

use alqa_core::classifier::Prediction;
use alqa_core::data_model::{Annotation, Label};
use alqa_core::orchestrator::{self, LearningCurve, MeanPoint};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::model::{DefectTicket, LabelTask, Resolution, TaskState, TicketQueue};
use crate::oracle::EnqueueRequest;
use crate::service::{CreateRun, ForwardOptions, RunSummary, Service, TaskFilter, TicketFilter};

type AppState = Arc<Service>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) | ServiceError::Leakage(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ServiceError>;

/// Runs a blocking service call off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Http(format!("worker panicked: {e}")))?
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/curve", get(get_curve))
        .route("/runs/{id}/tasks", post(enqueue))
        .route("/runs/{id}/defects", post(forward))
        .route("/tasks", get(list_tasks))
        .route("/tasks/{id}/label", post(submit_label))
        .route("/defects", get(list_defects))
        .route("/defects/{id}/resolution", post(resolve))
        .route("/images/{run}/{image}", get(image))
        .with_state(service)
}

pub async fn serve(service: Arc<Service>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(service)).await
}

async fn create_run(State(s): State<AppState>, Json(req): Json<CreateRun>) -> Result<(StatusCode, Json<RunSummary>), ServiceError> {
    let run = blocking(move || s.create_run(req)).await?;
    Ok((StatusCode::CREATED, Json(run)))
}

async fn list_runs(State(s): State<AppState>) -> ApiResult<Vec<RunSummary>> {
    blocking(move || s.run_ids().iter().map(|id| s.run_summary(id)).collect())
        .await
        .map(Json)
}

async fn get_run(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<RunSummary> {
    blocking(move || s.run_summary(&id)).await.map(Json)
}

#[derive(Serialize, Deserialize)]
pub struct CurveResponse {
    pub curves: Vec<LearningCurve>,
    /// Seed mean and standard deviation per round; empty until every seed
    /// has a checkpoint.
    pub mean: Vec<MeanPoint>,
}

async fn get_curve(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<CurveResponse> {
    blocking(move || {
        let curves = s.curves(&id)?;
        let mean = orchestrator::mean_curve(&curves).unwrap_or_default();
        Ok(CurveResponse { curves, mean })
    })
    .await
    .map(Json)
}

async fn enqueue(State(s): State<AppState>, Path(id): Path<String>, Json(req): Json<EnqueueRequest>) -> ApiResult<Vec<LabelTask>> {
    blocking(move || s.enqueue_batch(&id, &req.image_ids)).await.map(Json)
}

#[derive(Deserialize)]
struct TaskQuery {
    state: Option<TaskState>,
    run: Option<String>,
}

async fn list_tasks(State(s): State<AppState>, Query(q): Query<TaskQuery>) -> ApiResult<Vec<LabelTask>> {
    blocking(move || s.tasks(&TaskFilter { state: q.state, run: q.run }))
        .await
        .map(Json)
}

#[derive(Serialize, Deserialize)]
pub struct LabelRequest {
    pub label: Annotation,
    pub annotator: String,
    pub duration_s: f64,
}

async fn submit_label(State(s): State<AppState>, Path(id): Path<String>, Json(req): Json<LabelRequest>) -> ApiResult<LabelTask> {
    blocking(move || s.submit_label(&id, req.label, &req.annotator, req.duration_s))
        .await
        .map(Json)
}

#[derive(Serialize, Deserialize)]
pub struct PredictionIn {
    pub image_id: String,
    pub label: Label,
    pub uncertainty: f64,
    pub p_defective: f64,
}

#[derive(Serialize, Deserialize)]
pub struct ForwardRequest {
    pub predictions: Vec<PredictionIn>,
    #[serde(default)]
    pub uncertain_cutoff: Option<f64>,
}

async fn forward(State(s): State<AppState>, Path(id): Path<String>, Json(req): Json<ForwardRequest>) -> ApiResult<Vec<DefectTicket>> {
    let preds: Vec<(String, Prediction)> = req
        .predictions
        .into_iter()
        .map(|p| {
            (
                p.image_id,
                Prediction {
                    label: p.label,
                    uncertainty: p.uncertainty,
                    p_defective: p.p_defective,
                },
            )
        })
        .collect();
    let opts = ForwardOptions {
        uncertain_cutoff: req.uncertain_cutoff,
    };
    blocking(move || s.forward_predictions(&id, &preds, opts)).await.map(Json)
}

#[derive(Deserialize)]
struct DefectQuery {
    resolution: Option<Resolution>,
    queue: Option<TicketQueue>,
    run: Option<String>,
}

async fn list_defects(State(s): State<AppState>, Query(q): Query<DefectQuery>) -> ApiResult<Vec<DefectTicket>> {
    blocking(move || {
        s.tickets(&TicketFilter {
            resolution: q.resolution,
            queue: q.queue,
            run: q.run,
        })
    })
    .await
    .map(Json)
}

#[derive(Serialize, Deserialize)]
pub struct ResolveRequest {
    pub resolution: Resolution,
    pub resolver: String,
}

async fn resolve(State(s): State<AppState>, Path(id): Path<String>, Json(req): Json<ResolveRequest>) -> ApiResult<DefectTicket> {
    blocking(move || s.resolve_ticket(&id, req.resolution, &req.resolver))
        .await
        .map(Json)
}

async fn image(State(s): State<AppState>, Path((run, image)): Path<(String, String)>) -> Result<Response, ServiceError> {
    let id = image.strip_suffix(".png").unwrap_or(&image).to_owned();
    let path = blocking(move || s.image_file(&run, &id)).await?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ServiceError::NotFound(format!("{}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}
