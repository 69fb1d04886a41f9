//! HTTP/JSON wire types shared by services, load generator, and trainer.
//!
//! Stage timings reuse `esbench_core::metrics::StageTiming` so samples can
//! flow straight from response bodies into the report builder.

use esbench_core::index::ProductSummary;
use esbench_core::metrics::StageTiming;
use serde::{Deserialize, Serialize};

fn default_limit() -> usize {
    100
}

/// Query submitted to the planer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchRequest {
    pub request_id: String,
    pub user_id: u64,
    pub query_text: String,
    #[serde(default = "default_limit")]
    pub limit: usize,
}

/// Planer → recommender.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecommendRequest {
    pub user_id: u64,
    pub query_text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub category_probs: Vec<f32>,
    pub preference_weights: Vec<f32>,
    pub timings: Vec<StageTiming>,
    pub classifier_version: u64,
    pub preference_version: u64,
}

/// Planer → searcher.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearcherRequest {
    pub tokens: Vec<String>,
    pub category_probs: Vec<f32>,
    pub limit: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearcherResponse {
    pub product_ids: Vec<u64>,
    pub timings: Vec<StageTiming>,
}

/// Planer → ranker.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankRequest {
    pub product_ids: Vec<u64>,
    pub preference_weights: Vec<f32>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScoredProduct {
    pub product_id: u64,
    pub score: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankResponse {
    /// Sorted by score descending, ties broken by ascending product id.
    pub scores: Vec<ScoredProduct>,
    pub timings: Vec<StageTiming>,
}

/// Planer's reply to the client.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResponse {
    pub request_id: String,
    /// Product summaries in ranking order (score desc, id asc on ties).
    pub summaries: Vec<ProductSummary>,
    pub scores: Vec<ScoredProduct>,
    pub timings: Vec<StageTiming>,
    pub classifier_version: u64,
    pub preference_version: u64,
}

/// Error body used by every service. `failed_stage` is the specific stage
/// that failed when known, otherwise the failing service's scope name.
/// `timings` carries whatever stages completed before the failure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
    pub failed_stage: String,
    #[serde(default)]
    pub timings: Vec<StageTiming>,
}

/// Model artifact publish. The payload is the full artifact container
/// (version, kind, parameters, checksum) encoded as base64.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReloadRequest {
    pub payload: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReloadOutcome {
    pub accepted: bool,
    pub kind: Option<String>,
    pub version: Option<u64>,
    pub current_version: Option<u64>,
    pub message: String,
}

/// Index snapshot install: the full snapshot bytes encoded as base64.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstallIndexRequest {
    pub snapshot: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstallIndexOutcome {
    pub accepted: bool,
    pub product_count: usize,
    /// FNV-1a of the snapshot bytes, hex encoded.
    pub checksum: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub service: String,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct TierCounts {
    pub high: u64,
    pub medium: u64,
    pub low: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanerStats {
    pub service: String,
    pub requests: u64,
    pub product_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecommenderStats {
    pub service: String,
    pub requests: u64,
    pub classifier_version: u64,
    pub preference_version: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearcherStats {
    pub service: String,
    pub requests: u64,
    /// Cumulative count of actual probes per tier (skipped tiers do not
    /// count).
    pub probes: TierCounts,
    /// Documents indexed per tier.
    pub doc_counts: TierCounts,
    /// FNV-1a of the installed snapshot, hex encoded.
    pub index_checksum: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankerStats {
    pub service: String,
    pub requests: u64,
    pub index_checksum: String,
}
