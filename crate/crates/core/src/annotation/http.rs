//! HTTP front end for the annotation store.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    active_learning_cycle, AnnotationError, AnnotationStore, CodedCase, CycleConfig, ExportFilter,
    Label, LabelRecord, PoolItem, Priority, UnsureMode,
};
use crate::classifier::{save_model, ModelArtifact};

pub const TOKEN_ENV: &str = "REPURPOSE_TOKEN";

pub struct ServiceState {
    pub store: AnnotationStore,
    pub pool: Vec<PoolItem>,
    pub model: ModelArtifact,
    /// Retrained models are written here when set.
    pub model_path: Option<PathBuf>,
    pub cycle: CycleConfig,
    pub token: Option<String>,
}

pub type Shared = Arc<Mutex<ServiceState>>;

struct ApiError(StatusCode, String);

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        let status = match &e {
            AnnotationError::UnknownAnnotator(_) | AnnotationError::UnknownCandidate(_) => {
                StatusCode::NOT_FOUND
            }
            AnnotationError::Invalid(_) | AnnotationError::NoLabels => StatusCode::BAD_REQUEST,
            AnnotationError::Model(_) => StatusCode::UNPROCESSABLE_ENTITY,
            AnnotationError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn lock(state: &Shared) -> std::sync::MutexGuard<'_, ServiceState> {
    state.lock().unwrap_or_else(|p| p.into_inner())
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: String,
}

async fn next_candidate(State(s): State<Shared>, Query(q): Query<NextQuery>) -> ApiResult<Response> {
    let st = lock(&s);
    Ok(match st.store.next_candidate(&q.annotator)? {
        Some(c) => Json(c).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn get_candidate(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let st = lock(&s);
    let c = st.store.candidate(&id)?;
    Ok(Json(json!({
        "candidate": c,
        "labels": st.store.labels_for(&id),
        "decision": st.store.final_decision(&id),
    }))
    .into_response())
}

#[derive(Deserialize)]
struct LabelBody {
    candidate_id: String,
    annotator_id: String,
    label: String,
    #[serde(default)]
    coded_case: Option<CodedCase>,
    #[serde(default)]
    confident: Option<bool>,
    #[serde(default)]
    submitted_at: Option<i64>,
}

async fn post_label(State(s): State<Shared>, Json(body): Json<LabelBody>) -> ApiResult<Response> {
    let label: Label = body.label.parse()?;
    let record = LabelRecord {
        candidate_id: body.candidate_id,
        annotator_id: body.annotator_id,
        label,
        coded_case: body.coded_case,
        confident: body.confident,
        submitted_at: body
            .submitted_at
            .unwrap_or_else(|| chrono::Utc::now().timestamp()),
    };
    let mut st = lock(&s);
    st.store.submit_label(record.clone())?;
    let status = st.store.candidate(&record.candidate_id)?.status;
    Ok(Json(json!({ "status": "ok", "label": record, "candidate_status": status })).into_response())
}

#[derive(Deserialize)]
struct AnnotatorBody {
    annotator_id: String,
}

async fn post_annotator(State(s): State<Shared>, Json(body): Json<AnnotatorBody>) -> ApiResult<Response> {
    lock(&s).store.register_annotator(&body.annotator_id)?;
    Ok((StatusCode::CREATED, Json(json!({ "annotator_id": body.annotator_id }))).into_response())
}

async fn post_skip(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    lock(&s).store.skip(&id)?;
    Ok(Json(json!({ "status": "ok" })).into_response())
}

#[derive(Deserialize)]
struct AdjudicationBody {
    candidate_id: String,
    label: String,
}

async fn post_adjudication(
    State(s): State<Shared>,
    Json(body): Json<AdjudicationBody>,
) -> ApiResult<Response> {
    let label: Label = body.label.parse()?;
    let mut st = lock(&s);
    st.store.adjudicate(&body.candidate_id, label)?;
    Ok(Json(st.store.final_decision(&body.candidate_id)).into_response())
}

#[derive(Deserialize)]
struct AgreementQuery {
    mode: String,
}

async fn agreement(State(s): State<Shared>, Query(q): Query<AgreementQuery>) -> ApiResult<Response> {
    let mode: UnsureMode = q.mode.parse()?;
    Ok(Json(lock(&s).store.agreement(mode)).into_response())
}

async fn queue_stats(State(s): State<Shared>) -> Response {
    Json(lock(&s).store.queue_counts()).into_response()
}

#[derive(Deserialize, Default)]
struct CycleBody {
    #[serde(default)]
    budget: Option<usize>,
    #[serde(default)]
    priority: Option<Priority>,
}

#[derive(Serialize)]
struct CycleReply {
    #[serde(flatten)]
    outcome: super::CycleOutcome,
    model_path: Option<String>,
}

async fn post_cycle(State(s): State<Shared>, body: Option<Json<CycleBody>>) -> ApiResult<Response> {
    let body = body.map(|b| b.0).unwrap_or_default();
    let mut guard = lock(&s);
    let st = &mut *guard;
    let mut cfg = st.cycle.clone();
    if let Some(b) = body.budget {
        cfg.budget = b;
    }
    if let Some(p) = body.priority {
        cfg.priority = p;
    }
    let outcome = active_learning_cycle(&mut st.store, &st.pool, &st.model, &cfg)?;
    let mut written = None;
    if let Some(m) = &outcome.model {
        if let Some(path) = &st.model_path {
            save_model(m, path).map_err(AnnotationError::from)?;
            written = Some(path.display().to_string());
        }
        st.model = m.clone();
    }
    Ok(Json(CycleReply {
        outcome,
        model_path: written,
    })
    .into_response())
}

#[derive(Deserialize)]
struct ExportQuery {
    #[serde(default)]
    annotator: Option<String>,
    #[serde(default)]
    resolved_only: Option<bool>,
}

async fn export_csv(State(s): State<Shared>, Query(q): Query<ExportQuery>) -> Response {
    let filter = ExportFilter {
        resolved_only: q.resolved_only.unwrap_or(true),
        annotator: q.annotator,
    };
    let body = lock(&s).store.export_training_set(&filter);
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response()
}

async fn require_token(State(s): State<Shared>, headers: HeaderMap, req: Request, next: Next) -> Response {
    let expected = lock(&s).token.clone();
    if let Some(token) = expected {
        let given = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_str()) {
            return ApiError(StatusCode::UNAUTHORIZED, "missing or wrong bearer token".into())
                .into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/candidates/next", get(next_candidate))
        .route("/candidates/{id}", get(get_candidate))
        .route("/candidates/{id}/skip", post(post_skip))
        .route("/labels", post(post_label))
        .route("/annotators", post(post_annotator))
        .route("/adjudications", post(post_adjudication))
        .route("/stats/agreement", get(agreement))
        .route("/stats/queue", get(queue_stats))
        .route("/cycle", post(post_cycle))
        .route("/export/training.csv", get(export_csv))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(addr: std::net::SocketAddr, state: Shared) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
