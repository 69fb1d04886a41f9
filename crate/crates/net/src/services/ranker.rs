//! Ranker service: scores candidate products against the caller-supplied
//! preference weights and returns them ordered best-first.

use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use esbench_core::model::{kernels, PreferenceNet};
use esbench_core::{CoreError, PREFERENCE_DIM};

use super::{
    error_response, health, install_snapshot, serve_router, stages, InstalledIndex, ServerHandle,
    Stopwatch,
};
use crate::error::NetError;
use crate::state::Slot;
use crate::wire::{
    InstallIndexOutcome, InstallIndexRequest, RankRequest, RankResponse, RankerStats,
    ScoredProduct,
};

/// How a candidate's score is computed from its feature vector and the
/// preference weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankerMode {
    /// Dot product of weights and features.
    Dot,
    /// Elementwise product of weights and features fed through a small
    /// fixed network; heavier per candidate, same ordering contract.
    Mlp,
}

impl FromStr for RankerMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dot" => Ok(RankerMode::Dot),
            "mlp" => Ok(RankerMode::Mlp),
            other => Err(CoreError::InvalidConfig {
                field: "ranker_mode",
                reason: format!("unknown mode {other:?}, expected \"dot\" or \"mlp\""),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RankerConfig {
    pub mode: RankerMode,
    /// Seeds the fixed scoring network in mlp mode; ignored in dot mode.
    pub seed: u64,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            mode: RankerMode::Dot,
            seed: 0,
        }
    }
}

pub struct RankerState {
    pub index: Slot<InstalledIndex>,
    mode: RankerMode,
    /// Fixed scoring network for mlp mode, built once at startup.
    scorer: Option<PreferenceNet>,
    requests: AtomicU64,
}

impl RankerState {
    pub fn new(index: InstalledIndex, config: RankerConfig) -> Result<Self, NetError> {
        let scorer = match config.mode {
            RankerMode::Dot => None,
            RankerMode::Mlp => Some(PreferenceNet::new(&[PREFERENCE_DIM, 16, 1], config.seed)?),
        };
        Ok(RankerState {
            index: Slot::new(0, index),
            mode: config.mode,
            scorer,
            requests: AtomicU64::new(0),
        })
    }
}

fn score_products(
    state: &RankerState,
    weights: &[f32],
    product_ids: &[u64],
    features: &[Vec<f32>],
) -> Result<Vec<ScoredProduct>, CoreError> {
    let mut scored = Vec::with_capacity(product_ids.len());
    let mut buf = vec![0.0f32; PREFERENCE_DIM];
    for (&product_id, feats) in product_ids.iter().zip(features) {
        let score = match state.mode {
            RankerMode::Dot => weights.iter().zip(feats).map(|(w, f)| w * f).sum(),
            RankerMode::Mlp => {
                kernels::elementwise_multiply(weights, feats, &mut buf);
                let scorer = state
                    .scorer
                    .as_ref()
                    .expect("mlp mode always builds its scorer");
                scorer.forward(&buf)?[0]
            }
        };
        scored.push(ScoredProduct { product_id, score });
    }
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.product_id.cmp(&b.product_id))
    });
    Ok(scored)
}

async fn rank(State(state): State<Arc<RankerState>>, Json(req): Json<RankRequest>) -> Response {
    state.requests.fetch_add(1, Ordering::Relaxed);
    let watch = Stopwatch::begin();

    if req.preference_weights.len() != PREFERENCE_DIM {
        return error_response(
            StatusCode::BAD_REQUEST,
            stages::RANKER,
            format!(
                "preference_weights has {} entries, ranking needs {PREFERENCE_DIM}",
                req.preference_weights.len()
            ),
            vec![watch.finish(stages::RANKER)],
        );
    }

    let installed = state.index.snapshot();
    let features = match installed.value.bundle.rank_features(&req.product_ids) {
        Ok(f) => f,
        Err(e @ CoreError::UnknownProduct(_)) => {
            return error_response(
                StatusCode::NOT_FOUND,
                stages::RANKER,
                e.to_string(),
                vec![watch.finish(stages::RANKER)],
            );
        }
        Err(e) => {
            return error_response(
                StatusCode::INTERNAL_SERVER_ERROR,
                stages::RANKER,
                e.to_string(),
                vec![watch.finish(stages::RANKER)],
            );
        }
    };

    match score_products(&state, &req.preference_weights, &req.product_ids, &features) {
        Ok(scores) => (
            StatusCode::OK,
            Json(RankResponse {
                scores,
                timings: vec![watch.finish(stages::RANKER)],
            }),
        )
            .into_response(),
        Err(e) => error_response(
            StatusCode::INTERNAL_SERVER_ERROR,
            stages::RANKER,
            e.to_string(),
            vec![watch.finish(stages::RANKER)],
        ),
    }
}

async fn install_index(
    State(state): State<Arc<RankerState>>,
    Json(req): Json<InstallIndexRequest>,
) -> (StatusCode, Json<InstallIndexOutcome>) {
    install_snapshot(&state.index, &req)
}

async fn stats(State(state): State<Arc<RankerState>>) -> Json<RankerStats> {
    let installed = state.index.snapshot();
    Json(RankerStats {
        service: "ranker".to_string(),
        requests: state.requests.load(Ordering::Relaxed),
        index_checksum: format!("{:016x}", installed.value.checksum),
    })
}

pub fn ranker_router(state: Arc<RankerState>) -> Router {
    Router::new()
        .route("/rank", post(rank))
        .route("/install_index", post(install_index))
        .route("/stats", get(stats))
        .route("/health", get(|| async { health("ranker") }))
        .with_state(state)
}

pub async fn spawn_ranker(state: Arc<RankerState>, port: u16) -> Result<ServerHandle, NetError> {
    serve_router(ranker_router(state), port, "ranker").await
}
