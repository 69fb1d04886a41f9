//! Offline side of the benchmark: scheduled model (re)training jobs that
//! publish fresh artifacts to the live recommender, plus the index build
//! that seeds the online services.
//!
//! The scheduler never halts on a failed job: rejected, corrupt, or
//! unpublishable artifacts are recorded and the next tick proceeds.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::{Duration, Instant};

use base64::Engine;
use esbench_core::datagen::{ProductRecord, QueryLogEntry, TierAssignment, UserRecord};
use esbench_core::hash::fnv1a64;
use esbench_core::index::{build_indexes, write_snapshot};
use esbench_core::model::classifier::train_classifier_warm;
use esbench_core::model::preference::train_preference_warm;
use esbench_core::model::{
    serialize_classifier, serialize_preference, ClassifierConfig, Hyperparams, ModelKind,
    PreferenceNet, TextClassifierModel,
};
use esbench_core::CoreError;

use crate::error::NetError;
use crate::wire::{InstallIndexRequest, RecommenderStats, ReloadOutcome, ReloadRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    /// Each tick retrains from scratch on the full corpus.
    Batch,
    /// Each tick ingests the next chunk of the log stream into a sliding
    /// window and warm-starts training on the window.
    Streaming,
}

impl FromStr for ScheduleMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "batch" => Ok(ScheduleMode::Batch),
            "streaming" => Ok(ScheduleMode::Streaming),
            other => Err(CoreError::InvalidConfig {
                field: "schedule.mode",
                reason: format!("unknown mode {other:?}, expected \"batch\" or \"streaming\""),
            }),
        }
    }
}

impl ScheduleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleMode::Batch => "batch",
            ScheduleMode::Streaming => "streaming",
        }
    }
}

/// When a training job fires. `interval_s` is the nominal period;
/// `time_scale` accelerates it for desk-scale runs (scale 60 turns a
/// nominal hour into a wall-clock minute).
#[derive(Debug, Clone, Copy)]
pub struct Schedule {
    pub mode: ScheduleMode,
    pub interval_s: f64,
    pub time_scale: f64,
}

impl Schedule {
    /// Wall-clock period between ticks. Streaming periods are floored at
    /// one second so an aggressive time scale cannot melt the scheduler
    /// into a busy loop.
    pub fn effective_interval(&self) -> Result<Duration, CoreError> {
        if !self.interval_s.is_finite() || self.interval_s <= 0.0 {
            return Err(CoreError::InvalidConfig {
                field: "schedule.interval_s",
                reason: format!("must be finite and positive, got {}", self.interval_s),
            });
        }
        if !self.time_scale.is_finite() || self.time_scale <= 0.0 {
            return Err(CoreError::InvalidConfig {
                field: "schedule.time_scale",
                reason: format!("must be finite and positive, got {}", self.time_scale),
            });
        }
        let mut secs = self.interval_s / self.time_scale;
        if self.mode == ScheduleMode::Streaming {
            secs = secs.max(1.0);
        }
        Ok(Duration::from_secs_f64(secs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobOutcome {
    /// Artifact accepted and now serving.
    Published,
    /// Recommender already serves this version or newer; job discarded and
    /// the version counter resynced.
    RejectedStale,
    /// Recommender could not parse or verify the artifact.
    RejectedCorrupt,
    /// Could not reach the recommender within the retry budget.
    PublishFailed,
    /// Training itself failed; nothing was sent.
    TrainFailed,
}

impl JobOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            JobOutcome::Published => "published",
            JobOutcome::RejectedStale => "rejected_stale",
            JobOutcome::RejectedCorrupt => "rejected_corrupt",
            JobOutcome::PublishFailed => "publish_failed",
            JobOutcome::TrainFailed => "train_failed",
        }
    }
}

impl fmt::Display for JobOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One scheduler tick, as recorded in memory and in jobs.log.
#[derive(Debug, Clone)]
pub struct JobRecord {
    /// 1-based tick number.
    pub job: usize,
    pub kind: ModelKind,
    /// Training rows this job saw: the full corpus for batch, the sliding
    /// window for streaming.
    pub snapshot: usize,
    pub duration_ms: u64,
    /// Version offered to the recommender.
    pub version: u64,
    pub outcome: JobOutcome,
}

impl JobRecord {
    pub fn log_line(&self) -> String {
        format!(
            "job={} kind={} snapshot={} duration_ms={} version={} outcome={}",
            self.job,
            self.kind.as_str(),
            self.snapshot,
            self.duration_ms,
            self.version,
            self.outcome
        )
    }
}

/// Corpus a trainer draws from.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub users: Vec<UserRecord>,
    pub logs: Vec<QueryLogEntry>,
}

pub struct TrainerConfig {
    pub kind: ModelKind,
    pub schedule: Schedule,
    pub recommender_url: String,
    /// Log entries ingested per streaming tick.
    pub chunk_size: usize,
    /// Sliding-window capacity for streaming training.
    pub window_cap: usize,
    pub hyperparams: Hyperparams,
    /// Shape of a freshly initialized classifier (classifier kind only).
    pub classifier_config: ClassifierConfig,
    /// Hidden layer widths of a freshly initialized preference net
    /// (preference kind only).
    pub preference_hidden: Vec<usize>,
    /// First version offered; bumps after each successful publish.
    pub start_version: u64,
    /// When set, one line per job is appended here.
    pub jobs_log: Option<PathBuf>,
}

impl TrainerConfig {
    fn validate(&self) -> Result<(), CoreError> {
        if self.chunk_size == 0 {
            return Err(CoreError::InvalidConfig {
                field: "chunk_size",
                reason: "must be at least 1".to_string(),
            });
        }
        if self.window_cap < self.chunk_size {
            return Err(CoreError::InvalidConfig {
                field: "window_cap",
                reason: format!(
                    "window capacity {} cannot be below chunk size {}",
                    self.window_cap, self.chunk_size
                ),
            });
        }
        self.schedule.effective_interval().map(|_| ())
    }
}

/// The model being (re)trained across ticks.
enum TrainedModel {
    Classifier(TextClassifierModel),
    Preference(PreferenceNet),
}

impl TrainedModel {
    fn fresh(config: &TrainerConfig) -> Result<Self, CoreError> {
        match config.kind {
            ModelKind::Classifier => Ok(TrainedModel::Classifier(TextClassifierModel::new(
                config.classifier_config,
                config.hyperparams.seed,
            )?)),
            ModelKind::Preference => {
                let mut sizes = vec![esbench_core::model::preference::INPUT_DIM];
                sizes.extend_from_slice(&config.preference_hidden);
                sizes.push(esbench_core::PREFERENCE_DIM);
                Ok(TrainedModel::Preference(PreferenceNet::new(
                    &sizes,
                    config.hyperparams.seed,
                )?))
            }
        }
    }

    fn train(
        &mut self,
        users: &[UserRecord],
        logs: &[QueryLogEntry],
        hp: Hyperparams,
    ) -> Result<(), CoreError> {
        match self {
            TrainedModel::Classifier(model) => train_classifier_warm(model, logs, hp).map(|_| ()),
            TrainedModel::Preference(net) => {
                train_preference_warm(net, users, logs, hp).map(|_| ())
            }
        }
    }

    fn serialize(&self, version: u64) -> Vec<u8> {
        match self {
            TrainedModel::Classifier(model) => {
                serialize_classifier(model, version, 0).into_bytes()
            }
            TrainedModel::Preference(net) => serialize_preference(net, version, 0).into_bytes(),
        }
    }
}

/// How one publish attempt resolved, after retries.
enum PublishResult {
    Published,
    Stale { current_version: Option<u64> },
    Corrupt,
    Unreachable,
}

/// POST the artifact to the recommender. Transport failures retry up to
/// three attempts with doubling backoff; an error status is final.
async fn publish_artifact(
    client: &reqwest::Client,
    recommender_url: &str,
    payload: &[u8],
) -> PublishResult {
    let body = ReloadRequest {
        payload: base64::engine::general_purpose::STANDARD.encode(payload),
    };
    let url = format!("{recommender_url}/reload");
    for attempt in 0..3u32 {
        if attempt > 0 {
            tokio::time::sleep(Duration::from_millis(100 * 2u64.pow(attempt - 1))).await;
        }
        let resp = match client
            .post(&url)
            .timeout(Duration::from_secs(10))
            .json(&body)
            .send()
            .await
        {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!("publish attempt {} failed: {e}", attempt + 1);
                continue;
            }
        };
        let status = resp.status();
        let outcome = resp.json::<ReloadOutcome>().await.ok();
        return match status.as_u16() {
            200 => PublishResult::Published,
            409 => PublishResult::Stale {
                current_version: outcome.and_then(|o| o.current_version),
            },
            400 => PublishResult::Corrupt,
            _ => PublishResult::Unreachable,
        };
    }
    PublishResult::Unreachable
}

/// Ask the recommender which version of `kind` it currently serves.
/// `None` when the recommender is unreachable or answers garbage.
pub async fn served_version(recommender_url: &str, kind: ModelKind) -> Option<u64> {
    let client = reqwest::Client::new();
    let stats = client
        .get(format!("{recommender_url}/stats"))
        .timeout(Duration::from_secs(5))
        .send()
        .await
        .ok()?
        .json::<RecommenderStats>()
        .await
        .ok()?;
    Some(match kind {
        ModelKind::Classifier => stats.classifier_version,
        ModelKind::Preference => stats.preference_version,
    })
}

/// Run scheduled training jobs against one recommender for `run_for`,
/// ticking at the schedule's effective interval (first tick after one full
/// interval). Returns every job's record; individual job failures are
/// recorded, never fatal.
pub async fn run_scheduler(
    config: TrainerConfig,
    data: TrainingData,
    run_for: Duration,
) -> Result<Vec<JobRecord>, NetError> {
    config.validate()?;
    let interval = config.schedule.effective_interval()?;
    let client = reqwest::Client::new();

    let mut log_file = match &config.jobs_log {
        Some(path) => Some(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| {
                    NetError::Startup(format!("cannot open jobs log {}: {e}", path.display()))
                })?,
        ),
        None => None,
    };

    let mut records = Vec::new();
    let mut model: Option<TrainedModel> = None;
    let mut window: VecDeque<QueryLogEntry> = VecDeque::new();
    let mut cursor = 0usize;
    let mut next_version = config.start_version;

    let started = Instant::now();
    let deadline = started + run_for;
    let mut next_tick = started + interval;

    while next_tick <= deadline {
        tokio::time::sleep_until(tokio::time::Instant::from_std(next_tick)).await;
        let job_start = Instant::now();
        let job_number = records.len() + 1;

        // Assemble this tick's training rows.
        let train_rows: Vec<QueryLogEntry> = match config.schedule.mode {
            ScheduleMode::Batch => data.logs.clone(),
            ScheduleMode::Streaming => {
                if !data.logs.is_empty() {
                    for _ in 0..config.chunk_size {
                        window.push_back(data.logs[cursor].clone());
                        cursor = (cursor + 1) % data.logs.len();
                        while window.len() > config.window_cap {
                            window.pop_front();
                        }
                    }
                }
                window.iter().cloned().collect()
            }
        };
        let snapshot = train_rows.len();

        // Batch retrains from scratch; streaming warm-starts the last model.
        if config.schedule.mode == ScheduleMode::Batch || model.is_none() {
            model = Some(TrainedModel::fresh(&config).map_err(NetError::Core)?);
        }
        let current = model.as_mut().expect("model initialized above");
        let trained = current.train(&data.users, &train_rows, config.hyperparams);

        let offered_version = next_version;
        let outcome = match trained {
            Err(e) => {
                tracing::warn!("training job {job_number} failed: {e}");
                JobOutcome::TrainFailed
            }
            Ok(()) => {
                let payload = current.serialize(offered_version);
                match publish_artifact(&client, &config.recommender_url, &payload).await {
                    PublishResult::Published => {
                        next_version += 1;
                        JobOutcome::Published
                    }
                    PublishResult::Stale { current_version } => {
                        let served = match current_version {
                            Some(v) => Some(v),
                            None => served_version(&config.recommender_url, config.kind).await,
                        };
                        if let Some(v) = served {
                            next_version = v + 1;
                        }
                        JobOutcome::RejectedStale
                    }
                    PublishResult::Corrupt => JobOutcome::RejectedCorrupt,
                    PublishResult::Unreachable => JobOutcome::PublishFailed,
                }
            }
        };

        let record = JobRecord {
            job: job_number,
            kind: config.kind,
            snapshot,
            duration_ms: job_start.elapsed().as_millis() as u64,
            version: offered_version,
            outcome,
        };
        if let Some(f) = log_file.as_mut() {
            if let Err(e) = writeln!(f, "{}", record.log_line()) {
                tracing::warn!("cannot append to jobs log: {e}");
            }
        }
        records.push(record);

        next_tick += interval;
        let now = Instant::now();
        if next_tick < now {
            // A slow job ate whole periods; skip them rather than firing a
            // burst of catch-up ticks.
            let behind = now.duration_since(next_tick).as_secs_f64();
            let skipped = (behind / interval.as_secs_f64()).ceil() as u32;
            next_tick += interval * skipped;
        }
    }

    Ok(records)
}

/// Build the index bundle once and install it on every target service.
/// Returns the checksum of the snapshot bytes every target now serves.
pub async fn build_and_publish_indexes(
    catalog: &[ProductRecord],
    tiers: &TierAssignment,
    targets: &[String],
) -> Result<u64, NetError> {
    let bundle = build_indexes(catalog, tiers)?;
    let bytes = write_snapshot(&bundle);
    let checksum = fnv1a64(&bytes);
    let body = InstallIndexRequest {
        snapshot: base64::engine::general_purpose::STANDARD.encode(&bytes),
    };
    let client = reqwest::Client::new();
    for target in targets {
        let resp = client
            .post(format!("{target}/install_index"))
            .timeout(Duration::from_secs(30))
            .json(&body)
            .send()
            .await
            .map_err(|e| NetError::Transport(format!("install on {target} failed: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(NetError::Rejected(format!(
                "{target} rejected the index snapshot with status {status}"
            )));
        }
    }
    Ok(checksum)
}
