//! HTTP+JSON front end.
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | POST | `/experiments` | [`NewExperiment`] | 201, [`Snapshot`] |
//! | POST | `/experiments/{id}/observations` | JSON `{"observations": [...]}` or a bare array, or `text/csv` | [`Snapshot`] |
//! | GET | `/experiments/{id}/snapshot` | | [`Snapshot`] |
//! | GET | `/experiments/{id}/history` | `after=<seq>` | [`HistoryPage`] |
//! | POST | `/experiments/{id}/stop` | `{"alpha", "actor", "reason"}` | 201, [`DecisionRecord`] |
//! | GET | `/overview` | `alpha`, `procedure`, `fcr`, `select=a,b` | [`Overview`] |
//!
//! Errors are `{"error": <kind>, "message": <text>}` with 404 for unknown
//! experiments, 409 for conflicts, 400 for validation and 500 otherwise.

use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::{
    parse_observations_csv, ConfigError, DecisionRecord, HistoryPage, NewExperiment, Overview, OverviewQuery,
    ServeConfig, Service, ServiceError, Snapshot,
};
use crate::avcore::Observation;
use crate::multitest::Procedure;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self.0 {
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServiceError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ServiceError::Validation(_) => (StatusCode::BAD_REQUEST, "validation"),
            ServiceError::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
            ServiceError::Corrupt { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "corrupt"),
        };
        if status.is_server_error() {
            tracing::error!(error = %self.0, "request failed");
        }
        (status, Json(ErrorBody { error: kind, message: self.0.to_string() })).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(ServiceError::Validation(msg.into()))
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs blocking service work off the async workers.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(ServiceError::Validation(format!("request task failed: {e}"))))?
        .map_err(ApiError)
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/experiments", post(create))
        .route("/experiments/:id/observations", post(ingest))
        .route("/experiments/:id/snapshot", get(snapshot))
        .route("/experiments/:id/history", get(history))
        .route("/experiments/:id/stop", post(stop))
        .route("/overview", get(overview))
        .with_state(service)
}

async fn create(State(svc): State<Arc<Service>>, body: Bytes) -> ApiResult<(StatusCode, Json<Snapshot>)> {
    let req: NewExperiment =
        serde_json::from_slice(&body).map_err(|e| bad_request(format!("bad request body: {e}")))?;
    let snap = blocking(move || svc.create_experiment(req)).await?;
    Ok((StatusCode::CREATED, Json(snap)))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ObservationBody {
    Wrapped { observations: Vec<Observation> },
    Bare(Vec<Observation>),
}

async fn ingest(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<Snapshot>> {
    let is_csv = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.trim_start().to_ascii_lowercase().starts_with("text/csv"));
    let batch: Vec<Observation> = if is_csv {
        parse_observations_csv(&body[..])
            .map_err(|e| bad_request(format!("bad CSV: {e}")))?
            .into_iter()
            .map(|r| r.observation)
            .collect()
    } else {
        match serde_json::from_slice(&body).map_err(|e| bad_request(format!("bad request body: {e}")))? {
            ObservationBody::Wrapped { observations } | ObservationBody::Bare(observations) => observations,
        }
    };
    Ok(Json(blocking(move || svc.ingest_batch(&id, batch)).await?))
}

async fn snapshot(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Json<Snapshot>> {
    Ok(Json(svc.get_snapshot(&id)?))
}

#[derive(Deserialize)]
struct HistoryParams {
    after: Option<u64>,
}

async fn history(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    Query(q): Query<HistoryParams>,
) -> ApiResult<Json<HistoryPage>> {
    Ok(Json(svc.history(&id, q.after.unwrap_or(0))?))
}

#[derive(Deserialize)]
struct StopBody {
    alpha: f64,
    actor: String,
    #[serde(default)]
    reason: String,
}

async fn stop(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<DecisionRecord>)> {
    let req: StopBody = serde_json::from_slice(&body).map_err(|e| bad_request(format!("bad request body: {e}")))?;
    let record = blocking(move || svc.stop_experiment(&id, req.alpha, &req.actor, &req.reason)).await?;
    Ok((StatusCode::CREATED, Json(record)))
}

#[derive(Deserialize)]
struct OverviewParams {
    alpha: Option<f64>,
    procedure: Option<String>,
    fcr: Option<bool>,
    select: Option<String>,
}

async fn overview(State(svc): State<Arc<Service>>, Query(q): Query<OverviewParams>) -> ApiResult<Json<Overview>> {
    let procedure: Procedure = match q.procedure.as_deref() {
        Some(p) => p.parse().map_err(|e: crate::Error| bad_request(e.to_string()))?,
        None => Procedure::BhI,
    };
    let query = OverviewQuery {
        alpha: q.alpha.unwrap_or(0.05),
        procedure,
        fcr: q.fcr.unwrap_or(false),
        select: q
            .select
            .map(|s| s.split(',').filter(|x| !x.is_empty()).map(str::to_string).collect())
            .unwrap_or_default(),
    };
    Ok(Json(svc.overview(&query)?))
}

/// Serves until `shutdown` resolves, then checkpoints every experiment.
pub async fn serve_on<F>(
    listener: tokio::net::TcpListener,
    service: Arc<Service>,
    shutdown: F,
) -> Result<(), ServeError>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(service.clone())).with_graceful_shutdown(shutdown).await?;
    let svc = service.clone();
    tokio::task::spawn_blocking(move || svc.checkpoint())
        .await
        .map_err(|e| ServeError::Io(std::io::Error::other(e)))??;
    tracing::info!("shut down cleanly");
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

/// Opens the data directory, binds the configured address and serves until
/// SIGINT or SIGTERM.
pub async fn serve(config: ServeConfig) -> Result<(), ServeError> {
    config.validate()?;
    let opts = config.service_options();
    let service = tokio::task::spawn_blocking(move || Service::open(opts))
        .await
        .map_err(|e| ServeError::Io(std::io::Error::other(e)))??;
    let listener = tokio::net::TcpListener::bind(&config.listen)
        .await
        .map_err(|source| ServeError::Bind { addr: config.listen.clone(), source })?;
    tracing::info!(addr = %listener.local_addr()?, data_dir = %config.data_dir.display(), experiments = service.ids().len(), "listening");
    serve_on(listener, Arc::new(service), shutdown_signal()).await
}
