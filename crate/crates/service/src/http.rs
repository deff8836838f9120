use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use coach_core::recommend::RecommendError;
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::state::{RecommendationRequest, ReviewRequest};
use crate::{AppState, ErrorBody, ServiceConfig, ServiceError};

/// A `ServiceError` rendered as a JSON body with a matching status.
#[derive(Debug)]
pub struct ApiError(pub ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

pub fn status_for(e: &ServiceError) -> StatusCode {
    match e {
        ServiceError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
        ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
        ServiceError::Recommend(r) => match r {
            RecommendError::QuestionNotAllowed(_) => StatusCode::FORBIDDEN,
            RecommendError::NothingEligible(_) | RecommendError::DuplicateDecision { .. } => StatusCode::CONFLICT,
            RecommendError::UnknownBatchItem { .. } => StatusCode::NOT_FOUND,
            RecommendError::InvalidDecision(_) => StatusCode::UNPROCESSABLE_ENTITY,
            RecommendError::InvalidPolicy(_) | RecommendError::Scoring(_) | RecommendError::Log(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        },
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (status_for(&self.0), Json(ErrorBody::from(&self.0))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::Validation(format!("request body: {e}")))
}

/// Runs a state operation off the async workers.
async fn blocking<T, F>(state: &Arc<AppState>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&AppState) -> Result<T, ServiceError> + Send + 'static,
{
    let state = Arc::clone(state);
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
        .map_err(ApiError)
}

async fn require_token(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let token = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if state.token_allowed(token) {
        next.run(req).await
    } else {
        let body = ErrorBody {
            code: "unauthenticated".into(),
            message: "missing or unknown bearer token".into(),
        };
        (StatusCode::UNAUTHORIZED, Json(body)).into_response()
    }
}

async fn questions(State(state): State<Arc<AppState>>) -> ApiResult<Response> {
    Ok(Json(state.questions()?).into_response())
}

async fn recommend(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: RecommendationRequest = parse_body(&body)?;
    let batch = blocking(&state, move |s| s.recommend(&req)).await?;
    Ok((StatusCode::CREATED, Json(batch)).into_response())
}

async fn call(State(state): State<Arc<AppState>>, Path(call_id): Path<String>) -> ApiResult<Response> {
    Ok(Json(state.call(&call_id)?).into_response())
}

async fn review(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: ReviewRequest = parse_body(&body)?;
    let decision = blocking(&state, move |s| s.review(req)).await?;
    Ok((StatusCode::CREATED, Json(decision)).into_response())
}

async fn latest_report(State(state): State<Arc<AppState>>) -> ApiResult<Response> {
    Ok(Json(state.latest_report()?).into_response())
}

async fn reload(State(state): State<Arc<AppState>>) -> ApiResult<Response> {
    let kind = blocking(&state, |s| s.reload_model()).await?;
    Ok(Json(json!({ "model": kind })).into_response())
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/api/questions", get(questions))
        .route("/api/recommendations", post(recommend))
        .route("/api/calls/{call_id}", get(call))
        .route("/api/reviews", post(review))
        .route("/api/reports/latest", get(latest_report))
        .route("/api/admin/reload", post(reload))
        .layer(middleware::from_fn_with_state(Arc::clone(&state), require_token))
        .with_state(state);
    Router::new()
        .route("/healthz", get(|| async { Json(json!({ "status": "ok" })) }))
        .merge(api)
}

/// Loads the state and serves until ctrl-c.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let addr = config.listen_addr()?;
    let state = tokio::task::spawn_blocking(move || AppState::load(config))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ServiceError::Io {
            path: addr.to_string().into(),
            source: e,
        })?;
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))
}
