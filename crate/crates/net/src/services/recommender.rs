//! Recommender service: query parse, user lookup, category classification,
//! and preference inference behind a bounded serving pool.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use esbench_core::datagen::UserRecord;
use esbench_core::index::tokenize;
use esbench_core::model::{
    deserialize_artifact, predict_weights, query_features, user_features, AnyModel,
    PreferenceNet, TextClassifierModel,
};
use esbench_core::CoreError;
use tokio::sync::Semaphore;

use super::{error_response, health, serve_router, stages, ServerHandle, Stopwatch};
use crate::error::NetError;
use crate::state::Slot;
use crate::wire::{
    RecommendRequest, RecommendResponse, RecommenderStats, ReloadOutcome, ReloadRequest,
};

pub struct RecommenderState {
    users: HashMap<u64, UserRecord>,
    pub classifier: Slot<TextClassifierModel>,
    pub preference: Slot<PreferenceNet>,
    serving: Arc<Semaphore>,
    requests: AtomicU64,
}

impl RecommenderState {
    /// `serving_permits` bounds how many preference inferences run at once;
    /// waiting for a permit is part of the serving stage, as in a real
    /// model-serving hop.
    pub fn new(
        users: Vec<UserRecord>,
        classifier: (TextClassifierModel, u64),
        preference: (PreferenceNet, u64),
        serving_permits: usize,
    ) -> Self {
        RecommenderState {
            users: users.into_iter().map(|u| (u.user_id, u)).collect(),
            classifier: Slot::new(classifier.1, classifier.0),
            preference: Slot::new(preference.1, preference.0),
            serving: Arc::new(Semaphore::new(serving_permits.max(1))),
            requests: AtomicU64::new(0),
        }
    }
}

/// Lowercase, trim, collapse whitespace. Stands in for spell correction
/// and query rewrite: the stage exists and is timed, the transform is
/// deliberately the identity on already-normal queries.
fn normalize_query(text: &str) -> String {
    text.split_whitespace()
        .map(|t| t.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

async fn recommend(
    State(state): State<Arc<RecommenderState>>,
    Json(req): Json<RecommendRequest>,
) -> Response {
    state.requests.fetch_add(1, Ordering::Relaxed);
    let mut timings = Vec::with_capacity(4);

    let sw = Stopwatch::begin();
    let normalized = normalize_query(&req.query_text);
    timings.push(sw.finish(stages::QUERY_PARSE));

    let sw = Stopwatch::begin();
    let known_user = state.users.contains_key(&req.user_id);
    timings.push(sw.finish(stages::USER_DB));
    if !known_user {
        return error_response(
            StatusCode::NOT_FOUND,
            stages::USER_DB,
            format!("unknown user {}", req.user_id),
            timings,
        );
    }

    let sw = Stopwatch::begin();
    let classifier = state.classifier.snapshot();
    let category_probs = classifier.value.classify(&normalized);
    timings.push(sw.finish(stages::CLASSIFY));

    let sw = Stopwatch::begin();
    let permit = match state.serving.clone().acquire_owned().await {
        Ok(p) => p,
        Err(_) => {
            return error_response(
                StatusCode::INTERNAL_SERVER_ERROR,
                stages::SERVING,
                "serving pool closed".to_string(),
                timings,
            );
        }
    };
    let preference = state.preference.snapshot();
    let user_vec = user_features(req.user_id);
    let query_vec = query_features(&tokenize(&normalized));
    let net = preference.clone();
    let inferred = tokio::task::spawn_blocking(move || {
        predict_weights(&net.value, &user_vec, &query_vec)
    })
    .await;
    drop(permit);
    let preference_weights = match inferred {
        Ok(Ok(w)) => w,
        Ok(Err(e)) => {
            return error_response(
                StatusCode::INTERNAL_SERVER_ERROR,
                stages::SERVING,
                format!("inference failed: {e}"),
                timings,
            );
        }
        Err(e) => {
            return error_response(
                StatusCode::INTERNAL_SERVER_ERROR,
                stages::SERVING,
                format!("serving task failed: {e}"),
                timings,
            );
        }
    };
    timings.push(sw.finish(stages::SERVING));

    (
        StatusCode::OK,
        Json(RecommendResponse {
            category_probs,
            preference_weights,
            timings,
            classifier_version: classifier.version,
            preference_version: preference.version,
        }),
    )
        .into_response()
}

async fn reload(
    State(state): State<Arc<RecommenderState>>,
    Json(req): Json<ReloadRequest>,
) -> Response {
    let corrupt = |message: String| {
        (
            StatusCode::BAD_REQUEST,
            Json(ReloadOutcome {
                accepted: false,
                kind: None,
                version: None,
                current_version: None,
                message,
            }),
        )
            .into_response()
    };
    let bytes = match base64::engine::general_purpose::STANDARD.decode(&req.payload) {
        Ok(b) => b,
        Err(e) => return corrupt(format!("payload is not valid base64: {e}")),
    };
    let (version, model) = match deserialize_artifact(&bytes) {
        Ok(parsed) => parsed,
        Err(e) => return corrupt(format!("artifact rejected: {e}")),
    };
    let kind = model.kind();
    let installed = match model {
        AnyModel::Classifier(m) => state.classifier.try_install(version, m),
        AnyModel::Preference(n) => state.preference.try_install(version, n),
    };
    match installed {
        Ok(()) => {
            tracing::info!(kind = kind.as_str(), version, "model reloaded");
            (
                StatusCode::OK,
                Json(ReloadOutcome {
                    accepted: true,
                    kind: Some(kind.as_str().to_string()),
                    version: Some(version),
                    current_version: Some(version),
                    message: "installed".to_string(),
                }),
            )
                .into_response()
        }
        Err(CoreError::StaleVersion { offered, current }) => {
            tracing::warn!(kind = kind.as_str(), offered, current, "stale reload rejected");
            (
                StatusCode::CONFLICT,
                Json(ReloadOutcome {
                    accepted: false,
                    kind: Some(kind.as_str().to_string()),
                    version: Some(offered),
                    current_version: Some(current),
                    message: format!("stale version {offered}, current is {current}"),
                }),
            )
                .into_response()
        }
        Err(e) => corrupt(format!("install failed: {e}")),
    }
}

async fn stats(State(state): State<Arc<RecommenderState>>) -> Json<RecommenderStats> {
    Json(RecommenderStats {
        service: "recommender".to_string(),
        requests: state.requests.load(Ordering::Relaxed),
        classifier_version: state.classifier.version(),
        preference_version: state.preference.version(),
    })
}

pub fn recommender_router(state: Arc<RecommenderState>) -> Router {
    Router::new()
        .route("/recommend", post(recommend))
        .route("/reload", post(reload))
        .route("/stats", get(stats))
        .route("/health", get(|| async { health("recommender") }))
        .with_state(state)
}

pub async fn spawn_recommender(
    state: Arc<RecommenderState>,
    port: u16,
) -> Result<ServerHandle, NetError> {
    serve_router(recommender_router(state), port, "recommender").await
}
