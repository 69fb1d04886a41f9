//! TOML run configuration. Every field has a desk-scale default, so an
//! absent or empty config file runs the full benchmark on one machine.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use esbench_core::datagen::CatalogConfig;
use esbench_core::model::{ClassifierConfig, Hyperparams};
use esbench_core::CoreError;
use esbench_net::loadgen::{LoadProfile, ThinkDistribution};
use esbench_net::services::RankerMode;
use esbench_net::trainer::{Schedule, ScheduleMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsSection,
    pub data: DataSection,
    pub classifier: ClassifierSection,
    pub preference: PreferenceSection,
    pub services: ServicesSection,
    pub load: LoadSection,
    pub trainer: TrainerSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Generated corpus (catalog, users, logs, tiers) and index snapshot.
    pub data_dir: PathBuf,
    /// Trained model artifacts.
    pub artifacts_dir: PathBuf,
    /// Load-run samples and reports.
    pub results_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            data_dir: PathBuf::from("data"),
            artifacts_dir: PathBuf::from("artifacts"),
            results_dir: PathBuf::from("results"),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub products: usize,
    /// Attribute fields per product, including the named ones.
    pub attribute_fields: usize,
    pub users: usize,
    pub categories: usize,
    pub vocabulary: usize,
    pub logs: usize,
    /// Fraction of log clicks that land off-category.
    pub click_noise: f64,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            products: 10_000,
            attribute_fields: 32,
            users: 100,
            categories: 10,
            vocabulary: 400,
            logs: 20_000,
            click_noise: 0.02,
            zipf_exponent: 1.0,
            seed: 42,
        }
    }
}

impl DataSection {
    pub fn catalog_config(&self) -> CatalogConfig {
        CatalogConfig {
            product_count: self.products,
            attribute_field_count: self.attribute_fields,
            user_count: self.users,
            category_count: self.categories,
            vocabulary_size: self.vocabulary,
            zipf_exponent: self.zipf_exponent,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub bucket_count: usize,
    pub embedding_dim: usize,
    pub ngram_order: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection {
            // Desk scale: 2^16 buckets keep the artifact a few megabytes
            // while leaving hash collisions negligible for a 400-token
            // vocabulary.
            bucket_count: 1 << 16,
            embedding_dim: 16,
            ngram_order: 2,
            epochs: 5,
            learning_rate: 0.5,
            seed: 1,
        }
    }
}

impl ClassifierSection {
    pub fn model_config(&self, categories: usize) -> ClassifierConfig {
        ClassifierConfig {
            bucket_count: self.bucket_count,
            embedding_dim: self.embedding_dim,
            category_count: categories,
            ngram_order: self.ngram_order,
        }
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreferenceSection {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for PreferenceSection {
    fn default() -> Self {
        PreferenceSection {
            hidden: vec![256, 256],
            epochs: 5,
            learning_rate: 0.05,
            seed: 2,
        }
    }
}

impl PreferenceSection {
    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServicesSection {
    pub planer_port: u16,
    pub recommender_port: u16,
    pub searcher_port: u16,
    pub ranker_port: u16,
    /// Concurrent preference-serving slots on the recommender.
    pub serving_permits: usize,
    /// Planer's per-downstream-call deadline, in milliseconds.
    pub stage_timeout_ms: u64,
    /// "dot" or "mlp".
    pub ranker_mode: String,
    pub ranker_seed: u64,
}

impl Default for ServicesSection {
    fn default() -> Self {
        ServicesSection {
            planer_port: 7401,
            recommender_port: 7402,
            searcher_port: 7403,
            ranker_port: 7404,
            serving_permits: 2,
            stage_timeout_ms: 2000,
            ranker_mode: "dot".to_string(),
            ranker_seed: 0,
        }
    }
}

impl ServicesSection {
    pub fn ports(&self) -> [u16; 4] {
        [
            self.planer_port,
            self.recommender_port,
            self.searcher_port,
            self.ranker_port,
        ]
    }

    pub fn stage_timeout(&self) -> Duration {
        Duration::from_millis(self.stage_timeout_ms)
    }

    pub fn ranker_mode(&self) -> Result<RankerMode, CoreError> {
        self.ranker_mode.parse()
    }

    pub fn planer_url(&self) -> String {
        format!("http://127.0.0.1:{}", self.planer_port)
    }

    pub fn recommender_url(&self) -> String {
        format!("http://127.0.0.1:{}", self.recommender_port)
    }

    pub fn searcher_url(&self) -> String {
        format!("http://127.0.0.1:{}", self.searcher_port)
    }

    pub fn ranker_url(&self) -> String {
        format!("http://127.0.0.1:{}", self.ranker_port)
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadSection {
    pub virtual_users: usize,
    pub total_requests: usize,
    pub warmup_s: f64,
    /// "exponential" or "fixed".
    pub think: String,
    /// Mean think time for exponential, the constant for fixed; seconds.
    pub think_s: f64,
    /// Result-size cap per request.
    pub limit: usize,
    pub seed: u64,
}

impl Default for LoadSection {
    fn default() -> Self {
        LoadSection {
            virtual_users: 8,
            total_requests: 2000,
            warmup_s: 5.0,
            think: "exponential".to_string(),
            think_s: 0.05,
            limit: 100,
            seed: 7,
        }
    }
}

impl LoadSection {
    pub fn think_distribution(&self) -> Result<ThinkDistribution, CoreError> {
        match self.think.as_str() {
            "exponential" => Ok(ThinkDistribution::Exponential {
                mean_s: self.think_s,
            }),
            "fixed" => Ok(ThinkDistribution::Fixed {
                seconds: self.think_s,
            }),
            other => Err(CoreError::InvalidConfig {
                field: "load.think",
                reason: format!("unknown distribution {other:?}, expected \"exponential\" or \"fixed\""),
            }),
        }
    }

    pub fn profile(&self) -> Result<LoadProfile, CoreError> {
        let profile = LoadProfile {
            virtual_users: self.virtual_users,
            total_requests: self.total_requests,
            warmup: Duration::from_secs_f64(self.warmup_s.max(0.0)),
            think: self.think_distribution()?,
            seed: self.seed,
            limit: self.limit,
        };
        profile.validate()?;
        Ok(profile)
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    /// "batch" or "streaming".
    pub classifier_schedule: String,
    pub classifier_interval_s: f64,
    /// "batch" or "streaming".
    pub preference_schedule: String,
    pub preference_interval_s: f64,
    /// Accelerates both schedules: nominal seconds per wall-clock second.
    pub time_scale: f64,
    /// Log entries ingested per streaming tick.
    pub chunk_size: usize,
    /// Streaming window capacity.
    pub window_cap: usize,
    /// How long `serve --role trainer` keeps scheduling, in seconds.
    pub run_for_s: f64,
}

impl Default for TrainerSection {
    fn default() -> Self {
        TrainerSection {
            classifier_schedule: "batch".to_string(),
            classifier_interval_s: 3600.0,
            preference_schedule: "streaming".to_string(),
            preference_interval_s: 10.0,
            time_scale: 1.0,
            chunk_size: 1000,
            window_cap: 10_000,
            run_for_s: 60.0,
        }
    }
}

impl TrainerSection {
    pub fn classifier_schedule(&self) -> Result<Schedule, CoreError> {
        Ok(Schedule {
            mode: self.classifier_schedule.parse::<ScheduleMode>()?,
            interval_s: self.classifier_interval_s,
            time_scale: self.time_scale,
        })
    }

    pub fn preference_schedule(&self) -> Result<Schedule, CoreError> {
        Ok(Schedule {
            mode: self.preference_schedule.parse::<ScheduleMode>()?,
            interval_s: self.preference_interval_s,
            time_scale: self.time_scale,
        })
    }
}

impl RunConfig {
    /// Load from a TOML file, or desk defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: RunConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    /// Cross-field checks beyond what each consumer validates on its own.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.data.catalog_config().validate()?;
        self.classifier
            .model_config(self.data.categories)
            .validate()?;
        self.load.profile()?;
        self.services.ranker_mode()?;
        self.trainer.classifier_schedule()?;
        self.trainer.preference_schedule()?;
        let ports = self.services.ports();
        for (i, a) in ports.iter().enumerate() {
            for b in ports.iter().skip(i + 1) {
                if a == b && *a != 0 {
                    anyhow::bail!("services ports must be distinct, {a} is reused");
                }
            }
        }
        Ok(())
    }
}

/// Corpus file names inside the data directory.
pub mod files {
    pub const CATALOG: &str = "products.ndjson";
    pub const USERS: &str = "users.ndjson";
    pub const LOGS: &str = "logs.ndjson";
    pub const TIERS: &str = "tiers.csv";
    pub const INDEX: &str = "index.bin";
    pub const CLASSIFIER: &str = "classifier.model";
    pub const PREFERENCE: &str = "preference.model";
    pub const SAMPLES: &str = "samples.csv";
    pub const REPORT_JSON: &str = "report.json";
    pub const REPORT_TEXT: &str = "report.txt";
    pub const JOBS_LOG: &str = "jobs.log";
}
