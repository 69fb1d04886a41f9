//! Boots all four services of one pipeline, wired to each other over
//! loopback HTTP — the footprint of a desk-scale run, and the harness the
//! load generator and trainer point at.

use std::sync::Arc;
use std::time::Duration;

use esbench_core::datagen::{ProductRecord, TierAssignment, UserRecord};
use esbench_core::hash::fnv1a64;
use esbench_core::index::{build_indexes, write_snapshot};
use esbench_core::model::{PreferenceNet, TextClassifierModel};

use super::planer::{spawn_planer, PlanerConfig, PlanerState};
use super::ranker::{spawn_ranker, RankerConfig, RankerState};
use super::recommender::{spawn_recommender, RecommenderState};
use super::searcher::{spawn_searcher, SearcherState};
use super::{InstalledIndex, ServerHandle};
use crate::error::NetError;

pub struct ClusterConfig {
    pub catalog: Vec<ProductRecord>,
    pub users: Vec<UserRecord>,
    pub tiers: TierAssignment,
    /// Classifier model and its published version.
    pub classifier: (TextClassifierModel, u64),
    /// Preference network and its published version.
    pub preference: (PreferenceNet, u64),
    /// Ports for planer, recommender, searcher, ranker; `None` binds
    /// ephemeral ports on all four.
    pub ports: Option<[u16; 4]>,
    /// Concurrent preference-serving slots on the recommender.
    pub serving_permits: usize,
    /// Planer's per-downstream-call deadline.
    pub stage_timeout: Duration,
    pub ranker: RankerConfig,
}

/// A running four-service pipeline. URLs are live once `start` returns;
/// `shutdown` stops all services.
pub struct Cluster {
    pub planer_url: String,
    pub recommender_url: String,
    pub searcher_url: String,
    pub ranker_url: String,
    handles: Vec<ServerHandle>,
}

impl Cluster {
    pub async fn start(config: ClusterConfig) -> Result<Cluster, NetError> {
        // One index build serves all three index-holding services; the
        // checksum is that of the canonical snapshot bytes, so a later
        // install of the same catalog reports the same checksum.
        let bundle = build_indexes(&config.catalog, &config.tiers)?;
        let checksum = fnv1a64(&write_snapshot(&bundle));
        let installed = InstalledIndex { bundle, checksum };

        let ports = config.ports.unwrap_or([0; 4]);

        let ranker_state = Arc::new(RankerState::new(installed.clone(), config.ranker)?);
        let ranker = spawn_ranker(ranker_state, ports[3]).await?;

        let searcher_state = Arc::new(SearcherState::new(installed.clone()));
        let searcher = spawn_searcher(searcher_state, ports[2]).await?;

        let recommender_state = Arc::new(RecommenderState::new(
            config.users,
            config.classifier,
            config.preference,
            config.serving_permits,
        ));
        let recommender = spawn_recommender(recommender_state, ports[1]).await?;

        let planer_state = Arc::new(PlanerState::new(
            PlanerConfig {
                recommender_url: recommender.url(),
                searcher_url: searcher.url(),
                ranker_url: ranker.url(),
                stage_timeout: config.stage_timeout,
            },
            installed,
        ));
        let planer = spawn_planer(planer_state, ports[0]).await?;

        Ok(Cluster {
            planer_url: planer.url(),
            recommender_url: recommender.url(),
            searcher_url: searcher.url(),
            ranker_url: ranker.url(),
            handles: vec![planer, recommender, searcher, ranker],
        })
    }

    pub async fn shutdown(self) {
        for handle in self.handles {
            handle.shutdown().await;
        }
    }
}
