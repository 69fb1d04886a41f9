//! End-to-end service behavior over real loopback HTTP: the full pipeline
//! against an independently computed expectation, error contracts, hot
//! reload, and index reinstall.

mod common;

use std::collections::HashMap;
use std::time::Duration;

use base64::Engine;
use common::{product, start_fixture, start_fixture_with, CLASSIFIER_VERSION, PREFERENCE_VERSION};
use esbench_core::datagen::{Tier, TierAssignment};
use esbench_core::index::{build_indexes, tokenize, write_snapshot};
use esbench_core::model::{
    predict_weights, query_features, serialize_preference, user_features, PreferenceNet,
};
use esbench_core::PREFERENCE_DIM;
use esbench_net::services::{spawn_searcher, stages, InstalledIndex, RankerMode, SearcherState};
use esbench_net::wire::{
    ErrorResponse, InstallIndexOutcome, InstallIndexRequest, RecommenderStats, ReloadOutcome,
    ReloadRequest, SearchRequest, SearchResponse, SearcherRequest, SearcherResponse, SearcherStats,
};

fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

async fn send_search(
    client: &reqwest::Client,
    planer_url: &str,
    request_id: &str,
    user_id: u64,
    query_text: &str,
    limit: usize,
) -> reqwest::Response {
    client
        .post(format!("{planer_url}/search"))
        .json(&SearchRequest {
            request_id: request_id.to_string(),
            user_id,
            query_text: query_text.to_string(),
            limit,
        })
        .send()
        .await
        .unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pipeline_matches_independent_computation() {
    let fx = start_fixture().await;
    let client = reqwest::Client::new();

    // Take query text from a real log entry so the search is non-trivial.
    let log = fx
        .logs
        .iter()
        .find(|l| !tokenize(&l.query_text).is_empty())
        .expect("corpus has a tokenizable query");
    let user_id = 3;
    let limit = 10;

    let resp = send_search(&client, &fx.cluster.planer_url, "req-oracle", user_id, &log.query_text, limit).await;
    assert_eq!(resp.status(), 200);
    let body: SearchResponse = resp.json().await.unwrap();

    // Recompute the whole pipeline from the fixture's own inputs.
    let normalized = log
        .query_text
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    let probs = fx.classifier.classify(&normalized);
    let weights = predict_weights(
        &fx.preference,
        &user_features(user_id),
        &query_features(&tokenize(&normalized)),
    )
    .unwrap();

    let bundle = build_indexes(&fx.catalog, &fx.tiers).unwrap();
    let outcome = bundle.tier_search(&tokenize(&log.query_text), limit);
    let argmax = probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i as u32)
        .unwrap();
    let (mut expected_ids, rest): (Vec<u64>, Vec<u64>) = outcome
        .product_ids
        .into_iter()
        .partition(|id| bundle.category(*id) == Some(argmax));
    expected_ids.extend(rest);

    let features = bundle.rank_features(&expected_ids).unwrap();
    let mut expected_scores: Vec<(u64, f32)> = expected_ids
        .iter()
        .zip(&features)
        .map(|(&id, f)| (id, weights.iter().zip(f).map(|(w, x)| w * x).sum()))
        .collect();
    expected_scores.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });

    let got: Vec<(u64, f32)> = body.scores.iter().map(|s| (s.product_id, s.score)).collect();
    assert_eq!(got, expected_scores, "ranked ids and scores diverge from direct computation");

    let expected_summaries: Vec<_> = expected_scores
        .iter()
        .map(|(id, _)| bundle.summary(*id).unwrap().clone())
        .collect();
    assert_eq!(body.summaries, expected_summaries);
    assert_eq!(body.classifier_version, CLASSIFIER_VERSION);
    assert_eq!(body.preference_version, PREFERENCE_VERSION);

    // Summaries are ordered by descending score with ties broken by id.
    for pair in body.scores.windows(2) {
        assert!(
            pair[0].score > pair[1].score
                || (pair[0].score == pair[1].score && pair[0].product_id < pair[1].product_id)
        );
    }

    fx.cluster.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn healthy_response_carries_all_stages_once() {
    let fx = start_fixture().await;
    let client = reqwest::Client::new();

    let resp = send_search(&client, &fx.cluster.planer_url, "req-stages", 0, &fx.logs[0].query_text, 5).await;
    assert_eq!(resp.status(), 200);
    let body: SearchResponse = resp.json().await.unwrap();

    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &body.timings {
        *counts.entry(t.stage.as_str()).or_default() += 1;
    }
    for stage in stages::ALL {
        assert_eq!(counts.get(stage), Some(&1), "stage {stage} missing or duplicated");
    }
    assert_eq!(body.timings.len(), stages::ALL.len());

    // Child stage durations cannot exceed the orchestrating stage's span
    // (plus measurement slack).
    let planer_us = body
        .timings
        .iter()
        .find(|t| t.stage == stages::PLANER)
        .unwrap()
        .duration_us;
    let children_us: u64 = body
        .timings
        .iter()
        .filter(|t| t.stage != stages::PLANER)
        .map(|t| t.duration_us)
        .sum();
    assert!(
        children_us as f64 <= planer_us as f64 * 1.05 + 1.0,
        "nested stages sum to {children_us}us but the parent spans {planer_us}us"
    );

    fx.cluster.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unknown_user_fails_in_user_db_with_timings_up_to_it() {
    let fx = start_fixture().await;
    let client = reqwest::Client::new();

    let resp = send_search(&client, &fx.cluster.planer_url, "req-nouser", 999_999, "anything", 5).await;
    assert_eq!(resp.status(), 404);
    let body: ErrorResponse = resp.json().await.unwrap();
    assert_eq!(body.failed_stage, stages::USER_DB);
    assert!(body.error.contains("999999"), "error should name the user: {}", body.error);

    let stages_seen: Vec<&str> = body.timings.iter().map(|t| t.stage.as_str()).collect();
    assert_eq!(stages_seen, vec![stages::QUERY_PARSE, stages::USER_DB]);

    fx.cluster.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn downstream_outage_names_the_service_and_returns_no_results() {
    let fx = start_fixture().await;
    // Read the searcher's ephemeral port, then take the whole cluster's
    // searcher down by starting a private cluster is overkill: instead
    // spawn a fresh pipeline whose searcher URL points at a port that was
    // just released.
    let (tmp_state, tmp_handle);
    {
        let bundle = build_indexes(&fx.catalog, &fx.tiers).unwrap();
        tmp_state = std::sync::Arc::new(SearcherState::new(InstalledIndex::from_bundle(bundle)));
        tmp_handle = spawn_searcher(tmp_state.clone(), 0).await.unwrap();
    }
    let dead_searcher_url = tmp_handle.url();
    tmp_handle.shutdown().await;

    let planer_state = std::sync::Arc::new(esbench_net::services::PlanerState::new(
        esbench_net::services::PlanerConfig {
            recommender_url: fx.cluster.recommender_url.clone(),
            searcher_url: dead_searcher_url,
            ranker_url: fx.cluster.ranker_url.clone(),
            stage_timeout: Duration::from_millis(1000),
        },
        InstalledIndex::from_bundle(build_indexes(&fx.catalog, &fx.tiers).unwrap()),
    ));
    let planer = esbench_net::services::spawn_planer(planer_state, 0).await.unwrap();

    let client = reqwest::Client::new();
    let resp = send_search(&client, &planer.url(), "req-dead", 1, &fx.logs[0].query_text, 5).await;
    assert_eq!(resp.status(), 502, "connection refused maps to bad gateway");
    let body: ErrorResponse = resp.json().await.unwrap();
    assert_eq!(body.failed_stage, "searcher");
    // The recommender finished before the outage, so its timings survive;
    // no search stages can appear.
    assert!(body.timings.iter().all(|t| t.stage.starts_with("recommender.")));

    planer.shutdown().await;
    fx.cluster.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn repeated_request_is_deterministic_apart_from_timings() {
    let fx = start_fixture().await;
    let client = reqwest::Client::new();

    let one: SearchResponse = send_search(&client, &fx.cluster.planer_url, "req-a", 2, &fx.logs[1].query_text, 8)
        .await
        .json()
        .await
        .unwrap();
    let two: SearchResponse = send_search(&client, &fx.cluster.planer_url, "req-b", 2, &fx.logs[1].query_text, 8)
        .await
        .json()
        .await
        .unwrap();

    assert_eq!(one.summaries, two.summaries);
    assert_eq!(
        one.scores.iter().map(|s| (s.product_id, s.score)).collect::<Vec<_>>(),
        two.scores.iter().map(|s| (s.product_id, s.score)).collect::<Vec<_>>()
    );
    assert_eq!(one.classifier_version, two.classifier_version);
    assert_eq!(one.preference_version, two.preference_version);

    fx.cluster.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn recommendation_invariants_hold() {
    let fx = start_fixture().await;
    let client = reqwest::Client::new();

    let resp = client
        .post(format!("{}/recommend", fx.cluster.recommender_url))
        .json(&esbench_net::wire::RecommendRequest {
            user_id: 5,
            query_text: fx.logs[2].query_text.clone(),
        })
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    let body: esbench_net::wire::RecommendResponse = resp.json().await.unwrap();

    let sum: f32 = body.category_probs.iter().sum();
    assert!((sum - 1.0).abs() <= 1e-6, "category probabilities sum to {sum}");
    assert_eq!(body.preference_weights.len(), PREFERENCE_DIM);
    assert!(
        body.preference_weights.iter().all(|&w| w > 0.0 && w < 1.0),
        "weights must lie strictly inside (0, 1): {:?}",
        body.preference_weights
    );

    fx.cluster.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn reload_accepts_newer_rejects_stale_and_corrupt() {
    let fx = start_fixture().await;
    let client = reqwest::Client::new();
    let reload_url = format!("{}/reload", fx.cluster.recommender_url);

    // Newer version: accepted.
    let newer = PreferenceNet::new(fx.preference.sizes(), 77).unwrap();
    let artifact = serialize_preference(&newer, PREFERENCE_VERSION + 1, 0);
    let resp = client
        .post(&reload_url)
        .json(&ReloadRequest { payload: b64(artifact.bytes()) })
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    let outcome: ReloadOutcome = resp.json().await.unwrap();
    assert!(outcome.accepted);
    assert_eq!(outcome.version, Some(PREFERENCE_VERSION + 1));

    // Same version again: stale, current version reported.
    let resp = client
        .post(&reload_url)
        .json(&ReloadRequest { payload: b64(artifact.bytes()) })
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 409);
    let outcome: ReloadOutcome = resp.json().await.unwrap();
    assert!(!outcome.accepted);
    assert_eq!(outcome.current_version, Some(PREFERENCE_VERSION + 1));

    // Corrupt payload: rejected, serving state untouched.
    let mut bytes = artifact.bytes().to_vec();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    let resp = client
        .post(&reload_url)
        .json(&ReloadRequest { payload: b64(&bytes) })
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 400);

    let stats: RecommenderStats = client
        .get(format!("{}/stats", fx.cluster.recommender_url))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(stats.preference_version, PREFERENCE_VERSION + 1);
    assert_eq!(stats.classifier_version, CLASSIFIER_VERSION);

    // Search responses now carry the reloaded version.
    let search: SearchResponse = send_search(&client, &fx.cluster.planer_url, "req-reload", 1, &fx.logs[0].query_text, 5)
        .await
        .json()
        .await
        .unwrap();
    assert_eq!(search.preference_version, PREFERENCE_VERSION + 1);

    fx.cluster.shutdown().await;
}

/// A searcher over a hand-built catalog: one token saturates the High tier,
/// another lives only in the Low tier.
async fn tiered_searcher() -> (esbench_net::services::ServerHandle, std::sync::Arc<SearcherState>) {
    let mut catalog = Vec::new();
    let mut labels = HashMap::new();
    for i in 0..30u64 {
        catalog.push(product(i, "omnitoken common", 0, 1.0 - i as f64 / 100.0));
        labels.insert(i, Tier::High);
    }
    for i in 30..60u64 {
        catalog.push(product(i, "midtoken common", 1, 0.5 - i as f64 / 1000.0));
        labels.insert(i, Tier::Medium);
    }
    for i in 60..90u64 {
        catalog.push(product(i, "raretoken common", 2, 0.1 - i as f64 / 10000.0));
        labels.insert(i, Tier::Low);
    }
    let tiers = TierAssignment::from_labels(labels);
    let bundle = build_indexes(&catalog, &tiers).unwrap();
    let state = std::sync::Arc::new(SearcherState::new(InstalledIndex::from_bundle(bundle)));
    let handle = spawn_searcher(state.clone(), 0).await.unwrap();
    (handle, state)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn tier_probe_counters_reflect_query_depth() {
    let (handle, _state) = tiered_searcher().await;
    let client = reqwest::Client::new();
    let url = handle.url();

    // Saturating query: 30 High matches, limit 10 → only High probed.
    let resp: SearcherResponse = client
        .post(format!("{url}/query"))
        .json(&SearcherRequest {
            tokens: vec!["omnitoken".to_string()],
            category_probs: vec![],
            limit: 10,
        })
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(resp.product_ids.len(), 10);

    let stats: SearcherStats = client
        .get(format!("{url}/stats"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(stats.probes.high, 1);
    assert_eq!(stats.probes.medium, 0, "medium must not be probed when high saturates");
    assert_eq!(stats.probes.low, 0, "low must not be probed when high saturates");

    // A token that only exists in Low forces all three probes.
    let resp: SearcherResponse = client
        .post(format!("{url}/query"))
        .json(&SearcherRequest {
            tokens: vec!["raretoken".to_string()],
            category_probs: vec![],
            limit: 10,
        })
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(resp.product_ids.len(), 10);
    assert!(resp.product_ids.iter().all(|&id| id >= 60));

    let stats: SearcherStats = client
        .get(format!("{url}/stats"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!((stats.probes.high, stats.probes.medium, stats.probes.low), (2, 1, 1));
    assert_eq!(stats.requests, 2);

    // Every query reports all three tier stages, zero-length when skipped.
    let names: Vec<&str> = resp.timings.iter().map(|t| t.stage.as_str()).collect();
    assert_eq!(names, vec![stages::SEARCH_HIGH, stages::SEARCH_MEDIUM, stages::SEARCH_LOW]);

    handle.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn reinstalling_the_same_catalog_reproduces_the_checksum() {
    let fx = start_fixture().await;
    let client = reqwest::Client::new();

    let before: SearcherStats = client
        .get(format!("{}/stats", fx.cluster.searcher_url))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();

    // Rebuild the identical snapshot from the same corpus and reinstall.
    let bundle = build_indexes(&fx.catalog, &fx.tiers).unwrap();
    let snapshot = write_snapshot(&bundle);
    let outcome: InstallIndexOutcome = client
        .post(format!("{}/install_index", fx.cluster.searcher_url))
        .json(&InstallIndexRequest { snapshot: b64(&snapshot) })
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(outcome.accepted);
    assert_eq!(outcome.checksum, before.index_checksum, "same inputs must reproduce the checksum");

    // A different catalog changes the checksum and the doc counts.
    let small: Vec<_> = fx.catalog.iter().take(40).cloned().collect();
    let small_tiers = TierAssignment::from_labels(
        small
            .iter()
            .map(|p| (p.product_id, fx.tiers.label(p.product_id).unwrap()))
            .collect(),
    );
    let other = write_snapshot(&build_indexes(&small, &small_tiers).unwrap());
    let outcome: InstallIndexOutcome = client
        .post(format!("{}/install_index", fx.cluster.searcher_url))
        .json(&InstallIndexRequest { snapshot: b64(&other) })
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(outcome.accepted);
    assert_ne!(outcome.checksum, before.index_checksum);
    assert_eq!(outcome.product_count, 40);

    // Garbage is rejected and the installed index stays live.
    let resp = client
        .post(format!("{}/install_index", fx.cluster.searcher_url))
        .json(&InstallIndexRequest { snapshot: b64(b"not a snapshot") })
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 400);
    let after: SearcherStats = client
        .get(format!("{}/stats", fx.cluster.searcher_url))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(after.index_checksum, outcome.checksum);

    fx.cluster.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn mlp_ranker_orders_like_its_contract() {
    let fx = start_fixture_with(RankerMode::Mlp, 2).await;
    let client = reqwest::Client::new();

    let resp = send_search(&client, &fx.cluster.planer_url, "req-mlp", 4, &fx.logs[3].query_text, 10).await;
    assert_eq!(resp.status(), 200);
    let body: SearchResponse = resp.json().await.unwrap();
    assert!(!body.scores.is_empty());
    for pair in body.scores.windows(2) {
        assert!(
            pair[0].score > pair[1].score
                || (pair[0].score == pair[1].score && pair[0].product_id < pair[1].product_id)
        );
    }

    fx.cluster.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn health_and_stats_respond_on_every_service() {
    let fx = start_fixture().await;
    let client = reqwest::Client::new();

    for (url, service) in [
        (&fx.cluster.planer_url, "planer"),
        (&fx.cluster.recommender_url, "recommender"),
        (&fx.cluster.searcher_url, "searcher"),
        (&fx.cluster.ranker_url, "ranker"),
    ] {
        let health: esbench_net::wire::HealthResponse = client
            .get(format!("{url}/health"))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        assert_eq!(health.status, "ok");
        assert_eq!(health.service, service);

        let stats = client.get(format!("{url}/stats")).send().await.unwrap();
        assert_eq!(stats.status(), 200, "{service} stats endpoint");
    }

    fx.cluster.shutdown().await;
}
