//! Searcher service: staged tier search over the inverted indexes, with
//! predicted-category match priority and per-tier probe accounting.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use esbench_core::metrics::StageTiming;

use super::{health, install_snapshot, now_us, serve_router, stages, InstalledIndex, ServerHandle};
use crate::error::NetError;
use crate::state::{Slot, TierProbeCounters};
use crate::wire::{
    InstallIndexOutcome, InstallIndexRequest, SearcherRequest, SearcherResponse, SearcherStats,
    TierCounts,
};

pub struct SearcherState {
    pub index: Slot<InstalledIndex>,
    probes: TierProbeCounters,
    requests: AtomicU64,
}

impl SearcherState {
    pub fn new(index: InstalledIndex) -> Self {
        SearcherState {
            index: Slot::new(0, index),
            probes: TierProbeCounters::default(),
            requests: AtomicU64::new(0),
        }
    }
}

/// Stable partition: ids whose category is the most probable predicted
/// category move to the front, everything else keeps its relative order.
fn category_priority(ids: Vec<u64>, category_probs: &[f32], index: &InstalledIndex) -> Vec<u64> {
    if category_probs.is_empty() {
        return ids;
    }
    let mut argmax = 0usize;
    for (i, &p) in category_probs.iter().enumerate() {
        if p > category_probs[argmax] {
            argmax = i;
        }
    }
    let target = argmax as u32;
    let (matched, rest): (Vec<u64>, Vec<u64>) = ids
        .into_iter()
        .partition(|id| index.bundle.category(*id) == Some(target));
    let mut out = matched;
    out.extend(rest);
    out
}

async fn query(
    State(state): State<Arc<SearcherState>>,
    Json(req): Json<SearcherRequest>,
) -> (StatusCode, Json<SearcherResponse>) {
    state.requests.fetch_add(1, Ordering::Relaxed);
    let installed = state.index.snapshot();

    let mut start_us = now_us();
    let outcome = installed.value.bundle.tier_search(&req.tokens, req.limit);
    state.probes.record(outcome.probes);

    let mut timings = Vec::with_capacity(3);
    for (stage, nanos) in [
        stages::SEARCH_HIGH,
        stages::SEARCH_MEDIUM,
        stages::SEARCH_LOW,
    ]
    .into_iter()
    .zip(outcome.per_tier_nanos)
    {
        let duration_us = (nanos + 500) / 1_000;
        timings.push(StageTiming {
            stage: stage.to_string(),
            start_us,
            duration_us,
        });
        start_us += duration_us;
    }

    let product_ids = category_priority(outcome.product_ids, &req.category_probs, &installed.value);
    (
        StatusCode::OK,
        Json(SearcherResponse {
            product_ids,
            timings,
        }),
    )
}

async fn install_index(
    State(state): State<Arc<SearcherState>>,
    Json(req): Json<InstallIndexRequest>,
) -> (StatusCode, Json<InstallIndexOutcome>) {
    install_snapshot(&state.index, &req)
}

async fn stats(State(state): State<Arc<SearcherState>>) -> Json<SearcherStats> {
    let installed = state.index.snapshot();
    Json(SearcherStats {
        service: "searcher".to_string(),
        requests: state.requests.load(Ordering::Relaxed),
        probes: state.probes.counts(),
        doc_counts: TierCounts {
            high: installed.value.bundle.high.doc_count() as u64,
            medium: installed.value.bundle.medium.doc_count() as u64,
            low: installed.value.bundle.low.doc_count() as u64,
        },
        index_checksum: format!("{:016x}", installed.value.checksum),
    })
}

pub fn searcher_router(state: Arc<SearcherState>) -> Router {
    Router::new()
        .route("/query", post(query))
        .route("/install_index", post(install_index))
        .route("/stats", get(stats))
        .route("/health", get(|| async { health("searcher") }))
        .with_state(state)
}

pub async fn spawn_searcher(
    state: Arc<SearcherState>,
    port: u16,
) -> Result<ServerHandle, NetError> {
    serve_router(searcher_router(state), port, "searcher").await
}
