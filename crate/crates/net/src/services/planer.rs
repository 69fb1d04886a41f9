//! Planer service: front door of the pipeline. Fans a search request out to
//! the recommender, searcher, and ranker in sequence, hydrates the ranked
//! ids from the product store, and returns the merged response with every
//! stage timing attached.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use esbench_core::index::tokenize;
use esbench_core::metrics::StageTiming;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{
    error_response, health, install_snapshot, serve_router, stages, InstalledIndex, ServerHandle,
    Stopwatch,
};
use crate::error::NetError;
use crate::state::Slot;
use crate::wire::{
    ErrorResponse, InstallIndexOutcome, InstallIndexRequest, PlanerStats, RankRequest,
    RankResponse, RecommendRequest, RecommendResponse, SearchRequest, SearchResponse,
    SearcherRequest, SearcherResponse,
};

#[derive(Debug, Clone)]
pub struct PlanerConfig {
    pub recommender_url: String,
    pub searcher_url: String,
    pub ranker_url: String,
    /// Per-downstream-call deadline; a call past it fails the request.
    pub stage_timeout: Duration,
}

pub struct PlanerState {
    config: PlanerConfig,
    client: reqwest::Client,
    pub index: Slot<InstalledIndex>,
    requests: AtomicU64,
}

impl PlanerState {
    pub fn new(config: PlanerConfig, index: InstalledIndex) -> Self {
        PlanerState {
            config,
            client: reqwest::Client::new(),
            index: Slot::new(0, index),
            requests: AtomicU64::new(0),
        }
    }
}

/// How a downstream call failed: before a response arrived, or with an
/// error status (whose JSON body is kept when it parses).
enum CallError {
    Transport { message: String, is_timeout: bool },
    Status { status: u16, body: Option<ErrorResponse> },
}

async fn call<Req: Serialize, Resp: DeserializeOwned>(
    client: &reqwest::Client,
    url: String,
    timeout: Duration,
    body: &Req,
) -> Result<Resp, CallError> {
    let transport = |e: &reqwest::Error| CallError::Transport {
        message: e.to_string(),
        is_timeout: e.is_timeout(),
    };
    let resp = client
        .post(url)
        .timeout(timeout)
        .json(body)
        .send()
        .await
        .map_err(|e| transport(&e))?;
    let status = resp.status();
    if status.is_success() {
        resp.json::<Resp>().await.map_err(|e| transport(&e))
    } else {
        let body = match resp.text().await {
            Ok(text) => serde_json::from_str::<ErrorResponse>(&text).ok(),
            Err(_) => None,
        };
        Err(CallError::Status {
            status: status.as_u16(),
            body,
        })
    }
}

/// Map a downstream failure to the client-facing error. Transport failures
/// name the downstream service as the failed stage (504 on timeout, 502
/// otherwise); an error status with a parsed body keeps the downstream's
/// own failed stage, status, and timings.
fn downstream_error(scope: &'static str, err: CallError, timings: Vec<StageTiming>) -> Response {
    match err {
        CallError::Transport {
            message,
            is_timeout,
        } => {
            let status = if is_timeout {
                StatusCode::GATEWAY_TIMEOUT
            } else {
                StatusCode::BAD_GATEWAY
            };
            error_response(status, scope, format!("{scope}: {message}"), timings)
        }
        CallError::Status { status, body } => {
            let status =
                StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            match body {
                Some(mut downstream) => {
                    let mut merged = timings;
                    merged.append(&mut downstream.timings);
                    error_response(status, &downstream.failed_stage, downstream.error, merged)
                }
                None => error_response(
                    status,
                    scope,
                    format!("{scope} returned status {status}"),
                    timings,
                ),
            }
        }
    }
}

async fn search(State(state): State<Arc<PlanerState>>, Json(req): Json<SearchRequest>) -> Response {
    state.requests.fetch_add(1, Ordering::Relaxed);
    let planer_watch = Stopwatch::begin();
    let timeout = state.config.stage_timeout;
    let mut timings: Vec<StageTiming> = Vec::with_capacity(10);

    let recommend: RecommendResponse = match call(
        &state.client,
        format!("{}/recommend", state.config.recommender_url),
        timeout,
        &RecommendRequest {
            user_id: req.user_id,
            query_text: req.query_text.clone(),
        },
    )
    .await
    {
        Ok(r) => r,
        Err(e) => return downstream_error("recommender", e, timings),
    };
    timings.extend(recommend.timings.iter().cloned());

    let tokens = tokenize(&req.query_text);
    let searcher: SearcherResponse = match call(
        &state.client,
        format!("{}/query", state.config.searcher_url),
        timeout,
        &SearcherRequest {
            tokens,
            category_probs: recommend.category_probs.clone(),
            limit: req.limit,
        },
    )
    .await
    {
        Ok(r) => r,
        Err(e) => return downstream_error("searcher", e, timings),
    };
    timings.extend(searcher.timings.iter().cloned());

    let ranked: RankResponse = match call(
        &state.client,
        format!("{}/rank", state.config.ranker_url),
        timeout,
        &RankRequest {
            product_ids: searcher.product_ids.clone(),
            preference_weights: recommend.preference_weights.clone(),
        },
    )
    .await
    {
        Ok(r) => r,
        Err(e) => return downstream_error("ranker", e, timings),
    };
    timings.extend(ranked.timings.iter().cloned());

    let store_watch = Stopwatch::begin();
    let installed = state.index.snapshot();
    let mut summaries = Vec::with_capacity(ranked.scores.len());
    for scored in &ranked.scores {
        match installed.value.bundle.summary(scored.product_id) {
            Some(s) => summaries.push(s.clone()),
            None => {
                return error_response(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    stages::PRODUCT_DB,
                    format!("product {} has no stored summary", scored.product_id),
                    timings,
                );
            }
        }
    }
    timings.push(store_watch.finish(stages::PRODUCT_DB));

    let mut all = vec![planer_watch.finish(stages::PLANER)];
    all.append(&mut timings);

    (
        StatusCode::OK,
        Json(SearchResponse {
            request_id: req.request_id,
            summaries,
            scores: ranked.scores,
            timings: all,
            classifier_version: recommend.classifier_version,
            preference_version: recommend.preference_version,
        }),
    )
        .into_response()
}

async fn install_index(
    State(state): State<Arc<PlanerState>>,
    Json(req): Json<InstallIndexRequest>,
) -> (StatusCode, Json<InstallIndexOutcome>) {
    install_snapshot(&state.index, &req)
}

async fn stats(State(state): State<Arc<PlanerState>>) -> Json<PlanerStats> {
    let installed = state.index.snapshot();
    Json(PlanerStats {
        service: "planer".to_string(),
        requests: state.requests.load(Ordering::Relaxed),
        product_count: installed.value.bundle.product_count() as u64,
    })
}

pub fn planer_router(state: Arc<PlanerState>) -> Router {
    Router::new()
        .route("/search", post(search))
        .route("/install_index", post(install_index))
        .route("/stats", get(stats))
        .route("/health", get(|| async { health("planer") }))
        .with_state(state)
}

pub async fn spawn_planer(state: Arc<PlanerState>, port: u16) -> Result<ServerHandle, NetError> {
    serve_router(planer_router(state), port, "planer").await
}
