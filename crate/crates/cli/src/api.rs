//! `/v1` JSON API. Every handler reads one store snapshot through the shared
//! [`Platform`], so responses use exactly the configured analysis parameters.

use std::sync::Arc;

use asthmon_core::gateway::GatewayError;
use asthmon_core::report::{render_cohort, ReportFormat, ReportOptions};
use asthmon_core::{PatientId, Platform, PlatformError, Season, StoreError};
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

/// Seconds a client should wait before retrying a 503.
const RETRY_AFTER_SECS: &str = "5";

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Clone)]
pub struct AppState {
    platform: Platform,
    clock: Clock,
}

impl AppState {
    pub fn new(platform: Platform) -> Self {
        Self::with_clock(platform, Arc::new(Utc::now))
    }

    /// Token expiry is checked against `clock`; tests pin it.
    pub fn with_clock(platform: Platform, clock: Clock) -> Self {
        Self { platform, clock }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/observations", post(ingest))
        .route("/v1/patients", get(patients))
        .route("/v1/patients/{id}/timeline", get(timeline))
        .route("/v1/patients/{id}/episodes", get(episodes))
        .route("/v1/patients/{id}/triggers", get(triggers))
        .route("/v1/patients/{id}/summary", get(summary))
        .route("/v1/patients/{id}/report", get(report))
        .route("/v1/cohort/triggers", get(cohort))
        .route("/v1/alerts", get(alerts))
        .route("/v1/config", get(config))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

#[derive(Debug, Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self { status, kind, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(ErrorBody { error: self.kind, message: self.message });
        if self.status == StatusCode::SERVICE_UNAVAILABLE {
            (self.status, [(header::RETRY_AFTER, RETRY_AFTER_SECS)], body).into_response()
        } else {
            (self.status, body).into_response()
        }
    }
}

impl From<PlatformError> for ApiError {
    fn from(e: PlatformError) -> Self {
        let message = e.to_string();
        match e {
            PlatformError::Store(StoreError::UnknownPatient(_)) => Self::new(StatusCode::NOT_FOUND, "unknown_patient", message),
            PlatformError::Store(StoreError::StorageUnavailable(_)) => {
                Self::new(StatusCode::SERVICE_UNAVAILABLE, "storage_unavailable", message)
            }
            PlatformError::Config(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "config", message),
            _ => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "insufficient_data", message),
        }
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        let message = e.to_string();
        match e {
            GatewayError::Unauthorized(_) => Self::new(StatusCode::UNAUTHORIZED, "unauthorized", message),
            GatewayError::BatchTooLarge { .. } => Self::new(StatusCode::PAYLOAD_TOO_LARGE, "batch_too_large", message),
            GatewayError::StorageUnavailable(_) => Self::new(StatusCode::SERVICE_UNAVAILABLE, "storage_unavailable", message),
            GatewayError::TokenConflict(_) => Self::new(StatusCode::CONFLICT, "token_conflict", message),
        }
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

/// Runs analysis off the async workers so one patient's computation never
/// stalls requests for another.
async fn blocking<T, F>(state: AppState, f: F) -> Result<T, ApiError>
where
    F: FnOnce(&Platform) -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&state.platform))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn ingest(State(state): State<AppState>, headers: HeaderMap, body: String) -> Result<Response, ApiError> {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim)
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing bearer token"))?
        .to_owned();
    let now = (state.clock)();
    let receipt = blocking(state, move |p| Ok(p.gateway().ingest_ndjson(&token, &body, now)?)).await?;
    let status = if receipt.is_partial() { StatusCode::MULTI_STATUS } else { StatusCode::OK };
    Ok((status, Json(receipt)).into_response())
}

async fn patients(State(state): State<AppState>) -> Result<Response, ApiError> {
    let list = blocking(state, |p| Ok(p.patients())).await?;
    Ok(Json(list).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RangeQuery {
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
}

async fn timeline(
    State(state): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<RangeQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query?;
    if let (Some(from), Some(to)) = (q.from, q.to) {
        if from > to {
            return Err(ApiError::bad_request(format!("from {from} is after to {to}")));
        }
    }
    let view = blocking(state, move |p| Ok(p.timeline_view(&PatientId::new(id), q.from, q.to)?)).await?;
    Ok(Json(view).into_response())
}

async fn episodes(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let flags = blocking(state, move |p| Ok(p.episodes(&PatientId::new(id))?)).await?;
    Ok(Json(flags).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TriggersQuery {
    learning_end: Option<NaiveDate>,
}

async fn triggers(
    State(state): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<TriggersQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query?;
    let view = blocking(state, move |p| Ok(p.triggers(&PatientId::new(id), q.learning_end)?)).await?;
    Ok(Json(view).into_response())
}

async fn summary(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let view = blocking(state, move |p| Ok(p.summary(&PatientId::new(id))?)).await?;
    Ok(Json(view).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportQuery {
    format: Option<String>,
    learning_end: Option<NaiveDate>,
    #[serde(default)]
    by_pollen_segment: bool,
    learning_days: Option<usize>,
}

fn parse_format(format: Option<&str>) -> Result<ReportFormat, ApiError> {
    format.map_or(Ok(ReportFormat::default()), |f| f.parse().map_err(ApiError::bad_request))
}

fn content_type(format: ReportFormat) -> &'static str {
    match format {
        ReportFormat::Markdown => "text/markdown; charset=utf-8",
        ReportFormat::Csv => "text/csv; charset=utf-8",
        ReportFormat::Json => "application/json",
    }
}

async fn report(
    State(state): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<ReportQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query?;
    let format = parse_format(q.format.as_deref())?;
    let options =
        ReportOptions { learning_end: q.learning_end, by_pollen_segment: q.by_pollen_segment, learning_days: q.learning_days };
    let text = blocking(state, move |p| Ok(p.report(&PatientId::new(id), &options)?.render(format))).await?;
    Ok(([(header::CONTENT_TYPE, content_type(format))], text).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CohortQuery {
    season: Option<String>,
    format: Option<String>,
}

/// With `season`, the cohort summary for that season; without, every season
/// that has eligible patients.
async fn cohort(State(state): State<AppState>, query: Result<Query<CohortQuery>, QueryRejection>) -> Result<Response, ApiError> {
    let Query(q) = query?;
    let format = parse_format(q.format.as_deref().or(Some("json")))?;
    match q.season {
        Some(s) => {
            let season: Season = s.parse().map_err(ApiError::bad_request)?;
            let summary = blocking(state, move |p| Ok(p.cohort(season)?)).await?;
            match format {
                ReportFormat::Json => Ok(Json(summary).into_response()),
                _ => Ok(([(header::CONTENT_TYPE, content_type(format))], render_cohort(&summary, format)).into_response()),
            }
        }
        None => {
            let overview = blocking(state, |p| Ok(p.cohort_overview()?)).await?;
            Ok(Json(overview).into_response())
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlertsQuery {
    patient_id: Option<String>,
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
}

async fn alerts(State(state): State<AppState>, query: Result<Query<AlertsQuery>, QueryRejection>) -> Result<Response, ApiError> {
    let Query(q) = query?;
    let list = blocking(state, move |p| {
        let patient = q.patient_id.map(PatientId::new);
        Ok(p.alerts(patient.as_ref(), q.from, q.to))
    })
    .await?;
    Ok(Json(list).into_response())
}

/// The analysis parameters in force, including the healthy ranges the
/// dashboard shades against.
async fn config(State(state): State<AppState>) -> Json<asthmon_core::AnalysisConfig> {
    Json(state.platform.config().clone())
}
