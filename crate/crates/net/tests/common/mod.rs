//! Shared fixtures for service-level tests: a small generated corpus, fresh
//! (untrained) models, and a cluster on ephemeral ports with every input
//! retained so tests can recompute expected responses independently.

use std::time::Duration;

use esbench_core::datagen::{
    assign_tiers, generate_catalog, generate_query_logs, generate_users, CatalogConfig,
    ProductRecord, QueryLogEntry, TierAssignment, UserRecord,
};
use esbench_core::model::{ClassifierConfig, PreferenceNet, TextClassifierModel};
use esbench_core::PREFERENCE_DIM;
use esbench_net::services::{Cluster, ClusterConfig, RankerConfig, RankerMode};

pub const CATEGORIES: usize = 4;
pub const CLASSIFIER_VERSION: u64 = 3;
pub const PREFERENCE_VERSION: u64 = 5;

pub fn small_catalog_config() -> CatalogConfig {
    CatalogConfig {
        product_count: 120,
        attribute_field_count: 8,
        user_count: 16,
        category_count: CATEGORIES,
        vocabulary_size: 60,
        zipf_exponent: 1.0,
        seed: 11,
    }
}

pub struct Fixture {
    pub cluster: Cluster,
    pub catalog: Vec<ProductRecord>,
    pub users: Vec<UserRecord>,
    pub logs: Vec<QueryLogEntry>,
    pub tiers: TierAssignment,
    pub classifier: TextClassifierModel,
    pub preference: PreferenceNet,
}

pub fn classifier_config() -> ClassifierConfig {
    ClassifierConfig {
        bucket_count: 1 << 12,
        embedding_dim: 8,
        category_count: CATEGORIES,
        ngram_order: 2,
    }
}

/// Fresh models are enough for service behavior: classification and
/// preference prediction are deterministic functions of the seeds.
pub fn fresh_models() -> (TextClassifierModel, PreferenceNet) {
    let classifier = TextClassifierModel::new(classifier_config(), 21).unwrap();
    let preference = PreferenceNet::new(
        &[
            esbench_core::model::preference::INPUT_DIM,
            16,
            PREFERENCE_DIM,
        ],
        22,
    )
    .unwrap();
    (classifier, preference)
}

pub async fn start_fixture() -> Fixture {
    start_fixture_with(RankerMode::Dot, 2).await
}

pub async fn start_fixture_with(ranker_mode: RankerMode, serving_permits: usize) -> Fixture {
    let cfg = small_catalog_config();
    let catalog = generate_catalog(&cfg).unwrap();
    let users = generate_users(&cfg).unwrap();
    let logs = generate_query_logs(&catalog, &users, 400, 0.05, cfg.seed).unwrap();
    let tiers = assign_tiers(&catalog);
    let (classifier, preference) = fresh_models();

    let cluster = Cluster::start(ClusterConfig {
        catalog: catalog.clone(),
        users: users.clone(),
        tiers: tiers.clone(),
        classifier: (classifier.clone(), CLASSIFIER_VERSION),
        preference: (preference.clone(), PREFERENCE_VERSION),
        ports: None,
        serving_permits,
        stage_timeout: Duration::from_millis(2000),
        ranker: RankerConfig {
            mode: ranker_mode,
            seed: 9,
        },
    })
    .await
    .unwrap();

    Fixture {
        cluster,
        catalog,
        users,
        logs,
        tiers,
        classifier,
        preference,
    }
}

/// A hand-built product whose title is exactly the given tokens.
pub fn product(id: u64, title: &str, category_id: u32, popularity: f64) -> ProductRecord {
    ProductRecord {
        product_id: id,
        title: title.to_string(),
        category_id,
        brand: format!("brand{}", id % 5),
        color: format!("color{}", id % 3),
        price: 10.0 + id as f64,
        popularity,
        extra_fields: Vec::new(),
    }
}
