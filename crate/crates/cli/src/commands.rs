//! The seven subcommands: corpus generation, index build, one-shot model
//! training, serving, the closed-loop load benchmark, report rendering,
//! and the kernel micro benchmark.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use esbench_core::datagen::{
    self, assign_tiers, generate_catalog, generate_query_logs, generate_users, ProductRecord,
    QueryLogEntry, Tier, TierAssignment, UserRecord,
};
use esbench_core::hash::fnv1a64;
use esbench_core::index::{build_indexes, write_snapshot};
use esbench_core::metrics::{build_report, render_text, write_samples_csv, read_samples_csv};
use esbench_core::model::{
    deserialize_artifact, micro_bench, serialize_classifier, serialize_preference,
    train_classifier, train_preference, AnyModel, BenchShape, Kernel, ModelKind, PreferenceNet,
    TextClassifierModel,
};
use esbench_net::loadgen::run_load;
use esbench_net::services::{
    spawn_planer, spawn_ranker, spawn_recommender, spawn_searcher, Cluster, ClusterConfig,
    InstalledIndex, PlanerConfig, PlanerState, RankerConfig, RankerState, RecommenderState,
    SearcherState, ServerHandle,
};
use esbench_net::trainer::{
    build_and_publish_indexes, run_scheduler, served_version, TrainerConfig, TrainingData,
};

use crate::config::{files, RunConfig};
use crate::Role;

/// Generate the corpus: catalog, users, query logs, and tier labels.
pub fn cmd_datagen(
    config: &RunConfig,
    out: Option<&Path>,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    let dir = out.unwrap_or(&config.paths.data_dir);
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create data directory {}", dir.display()))?;

    let mut catalog_config = config.data.catalog_config();
    if let Some(seed) = seed {
        catalog_config.seed = seed;
    }
    catalog_config.validate()?;

    let catalog = generate_catalog(&catalog_config)?;
    let users = generate_users(&catalog_config)?;
    let logs = generate_query_logs(
        &catalog,
        &users,
        config.data.logs,
        config.data.click_noise,
        catalog_config.seed,
    )?;
    let tiers = assign_tiers(&catalog);

    datagen::write_catalog(&dir.join(files::CATALOG), &catalog)?;
    datagen::write_users(&dir.join(files::USERS), &users)?;
    datagen::write_query_logs(&dir.join(files::LOGS), &logs)?;
    datagen::write_tiers(&dir.join(files::TIERS), &tiers)?;

    println!(
        "wrote {} products, {} users, {} query logs to {}",
        catalog.len(),
        users.len(),
        logs.len(),
        dir.display()
    );
    println!(
        "tiers: {} high / {} medium / {} low",
        tiers.count(Tier::High),
        tiers.count(Tier::Medium),
        tiers.count(Tier::Low)
    );
    Ok(())
}

/// The generated corpus, read back from disk.
pub struct Corpus {
    pub catalog: Vec<ProductRecord>,
    pub users: Vec<UserRecord>,
    pub logs: Vec<QueryLogEntry>,
    pub tiers: TierAssignment,
}

pub fn read_corpus(data_dir: &Path) -> anyhow::Result<Corpus> {
    let read = |name: &str| data_dir.join(name);
    let catalog = datagen::read_catalog(&read(files::CATALOG)).with_context(|| {
        format!(
            "cannot read corpus from {}; run `esbench datagen` first",
            data_dir.display()
        )
    })?;
    let users = datagen::read_users(&read(files::USERS))?;
    let logs = datagen::read_query_logs(&read(files::LOGS))?;
    let tiers = datagen::read_tiers(&read(files::TIERS))?;
    Ok(Corpus {
        catalog,
        users,
        logs,
        tiers,
    })
}

/// Build the tiered index snapshot and write it out.
pub fn cmd_index(config: &RunConfig, out: Option<&Path>) -> anyhow::Result<()> {
    let corpus = read_corpus(&config.paths.data_dir)?;
    let bundle = build_indexes(&corpus.catalog, &corpus.tiers)?;
    let bytes = write_snapshot(&bundle);
    let checksum = fnv1a64(&bytes);

    let path = match out {
        Some(p) => p.to_path_buf(),
        None => config.paths.data_dir.join(files::INDEX),
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&path, &bytes)
        .with_context(|| format!("cannot write index snapshot {}", path.display()))?;

    println!(
        "index snapshot: {} products ({} high / {} medium-partition / {} low docs), {} bytes, checksum {:016x}",
        bundle.product_count(),
        bundle.high.doc_count(),
        bundle.medium.doc_count(),
        bundle.low.doc_count(),
        bytes.len(),
        checksum
    );
    println!("wrote {}", path.display());
    Ok(())
}

/// Train both models on the full corpus and write version-1 artifacts.
pub fn cmd_train(config: &RunConfig, out: Option<&Path>, seed: Option<u64>) -> anyhow::Result<()> {
    let corpus = read_corpus(&config.paths.data_dir)?;
    let dir = out.unwrap_or(&config.paths.artifacts_dir);
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create artifacts directory {}", dir.display()))?;

    let mut classifier_hp = config.classifier.hyperparams();
    let mut preference_hp = config.preference.hyperparams();
    if let Some(seed) = seed {
        classifier_hp.seed = seed;
        preference_hp.seed = seed.wrapping_add(1);
    }

    let started = std::time::Instant::now();
    let (classifier, classifier_stats) = train_classifier(
        &corpus.logs,
        config.classifier.model_config(config.data.categories),
        classifier_hp,
    )?;
    println!(
        "classifier: trained on {} logs in {:.1}s, final epoch loss {:.4}",
        corpus.logs.len(),
        started.elapsed().as_secs_f64(),
        classifier_stats.epoch_losses.last().copied().unwrap_or(0.0)
    );

    let started = std::time::Instant::now();
    let (preference, preference_stats) = train_preference(
        &corpus.users,
        &corpus.logs,
        &config.preference.hidden,
        preference_hp,
    )?;
    println!(
        "preference: trained on {} users / {} logs in {:.1}s, final epoch loss {:.4}",
        corpus.users.len(),
        corpus.logs.len(),
        started.elapsed().as_secs_f64(),
        preference_stats.epoch_losses.last().copied().unwrap_or(0.0)
    );

    // Fresh training always publishes as version 1; live retraining bumps
    // from whatever the recommender currently serves.
    let classifier_artifact = serialize_classifier(&classifier, 1, 0);
    let preference_artifact = serialize_preference(&preference, 1, 0);
    let classifier_path = dir.join(files::CLASSIFIER);
    let preference_path = dir.join(files::PREFERENCE);
    std::fs::write(&classifier_path, classifier_artifact.bytes())?;
    std::fs::write(&preference_path, preference_artifact.bytes())?;
    println!(
        "wrote {} ({} bytes) and {} ({} bytes)",
        classifier_path.display(),
        classifier_artifact.len(),
        preference_path.display(),
        preference_artifact.len()
    );
    Ok(())
}

/// Both model artifacts, read back from disk with their versions.
pub struct LoadedModels {
    pub classifier: (TextClassifierModel, u64),
    pub preference: (PreferenceNet, u64),
}

pub fn read_models(artifacts_dir: &Path) -> anyhow::Result<LoadedModels> {
    let read_one = |name: &str, want: ModelKind| -> anyhow::Result<(u64, AnyModel)> {
        let path = artifacts_dir.join(name);
        let bytes = std::fs::read(&path).with_context(|| {
            format!(
                "cannot read model artifact {}; run `esbench train` first",
                path.display()
            )
        })?;
        let (version, model) = deserialize_artifact(&bytes)?;
        if model.kind() != want {
            bail!(
                "artifact {} holds a {} model, expected {}",
                path.display(),
                model.kind().as_str(),
                want.as_str()
            );
        }
        Ok((version, model))
    };

    let (classifier_version, classifier) = read_one(files::CLASSIFIER, ModelKind::Classifier)?;
    let (preference_version, preference) = read_one(files::PREFERENCE, ModelKind::Preference)?;
    let AnyModel::Classifier(classifier) = classifier else {
        unreachable!("kind checked above");
    };
    let AnyModel::Preference(preference) = preference else {
        unreachable!("kind checked above");
    };
    Ok(LoadedModels {
        classifier: (classifier, classifier_version),
        preference: (preference, preference_version),
    })
}

fn cluster_config(
    config: &RunConfig,
    corpus: Corpus,
    models: LoadedModels,
    ports: Option<[u16; 4]>,
) -> anyhow::Result<ClusterConfig> {
    Ok(ClusterConfig {
        catalog: corpus.catalog,
        users: corpus.users,
        tiers: corpus.tiers,
        classifier: models.classifier,
        preference: models.preference,
        ports,
        serving_permits: config.services.serving_permits,
        stage_timeout: config.services.stage_timeout(),
        ranker: RankerConfig {
            mode: config.services.ranker_mode()?,
            seed: config.services.ranker_seed,
        },
    })
}

async fn wait_for_ctrl_c() {
    match tokio::signal::ctrl_c().await {
        Ok(()) => println!("shutting down"),
        Err(e) => eprintln!("cannot listen for ctrl-c, shutting down: {e}"),
    }
}

/// Boot one role (or the whole pipeline) and serve until interrupted.
pub async fn cmd_serve(config: &RunConfig, role: Role) -> anyhow::Result<()> {
    let data_dir = config.paths.data_dir.clone();
    let corpus = read_corpus(&data_dir)?;

    let build_installed = |corpus: &Corpus| -> anyhow::Result<InstalledIndex> {
        let bundle = build_indexes(&corpus.catalog, &corpus.tiers)?;
        let checksum = fnv1a64(&write_snapshot(&bundle));
        Ok(InstalledIndex { bundle, checksum })
    };

    match role {
        Role::All => {
            let models = read_models(&config.paths.artifacts_dir)?;
            let cluster_config =
                cluster_config(config, corpus, models, Some(config.services.ports()))?;
            let cluster = Cluster::start(cluster_config).await?;
            println!("planer      {}", cluster.planer_url);
            println!("recommender {}", cluster.recommender_url);
            println!("searcher    {}", cluster.searcher_url);
            println!("ranker      {}", cluster.ranker_url);
            wait_for_ctrl_c().await;
            cluster.shutdown().await;
        }
        Role::Planer => {
            let state = Arc::new(PlanerState::new(
                PlanerConfig {
                    recommender_url: config.services.recommender_url(),
                    searcher_url: config.services.searcher_url(),
                    ranker_url: config.services.ranker_url(),
                    stage_timeout: config.services.stage_timeout(),
                },
                build_installed(&corpus)?,
            ));
            let handle = spawn_planer(state, config.services.planer_port).await?;
            serve_one("planer", handle).await;
        }
        Role::Recommender => {
            let models = read_models(&config.paths.artifacts_dir)?;
            let state = Arc::new(RecommenderState::new(
                corpus.users,
                models.classifier,
                models.preference,
                config.services.serving_permits,
            ));
            let handle = spawn_recommender(state, config.services.recommender_port).await?;
            serve_one("recommender", handle).await;
        }
        Role::Searcher => {
            let state = Arc::new(SearcherState::new(build_installed(&corpus)?));
            let handle = spawn_searcher(state, config.services.searcher_port).await?;
            serve_one("searcher", handle).await;
        }
        Role::Ranker => {
            let state = Arc::new(RankerState::new(
                build_installed(&corpus)?,
                RankerConfig {
                    mode: config.services.ranker_mode()?,
                    seed: config.services.ranker_seed,
                },
            )?);
            let handle = spawn_ranker(state, config.services.ranker_port).await?;
            serve_one("ranker", handle).await;
        }
        Role::Trainer => {
            cmd_trainer_role(config, corpus).await?;
        }
    }
    Ok(())
}

async fn serve_one(name: &str, handle: ServerHandle) {
    println!("{name} {}", handle.url());
    wait_for_ctrl_c().await;
    handle.shutdown().await;
}

/// The trainer role: install a fresh index everywhere, then run both
/// retraining schedules against the live recommender.
async fn cmd_trainer_role(config: &RunConfig, corpus: Corpus) -> anyhow::Result<()> {
    let targets = [
        config.services.searcher_url(),
        config.services.ranker_url(),
        config.services.planer_url(),
    ];
    let checksum = build_and_publish_indexes(&corpus.catalog, &corpus.tiers, &targets).await?;
    println!("installed index snapshot {checksum:016x} on searcher, ranker, planer");

    std::fs::create_dir_all(&config.paths.results_dir)?;
    let jobs_log = config.paths.results_dir.join(files::JOBS_LOG);
    let recommender_url = config.services.recommender_url();
    let run_for = std::time::Duration::from_secs_f64(config.trainer.run_for_s.max(0.0));

    let classifier_start = served_version(&recommender_url, ModelKind::Classifier)
        .await
        .map_or(1, |v| v + 1);
    let preference_start = served_version(&recommender_url, ModelKind::Preference)
        .await
        .map_or(1, |v| v + 1);

    let data = TrainingData {
        users: corpus.users.clone(),
        logs: corpus.logs.clone(),
    };
    let classifier_config = TrainerConfig {
        kind: ModelKind::Classifier,
        schedule: config.trainer.classifier_schedule()?,
        recommender_url: recommender_url.clone(),
        chunk_size: config.trainer.chunk_size,
        window_cap: config.trainer.window_cap,
        hyperparams: config.classifier.hyperparams(),
        classifier_config: config.classifier.model_config(config.data.categories),
        preference_hidden: config.preference.hidden.clone(),
        start_version: classifier_start,
        jobs_log: Some(jobs_log.clone()),
    };
    let preference_config = TrainerConfig {
        kind: ModelKind::Preference,
        schedule: config.trainer.preference_schedule()?,
        recommender_url,
        chunk_size: config.trainer.chunk_size,
        window_cap: config.trainer.window_cap,
        hyperparams: config.preference.hyperparams(),
        classifier_config: config.classifier.model_config(config.data.categories),
        preference_hidden: config.preference.hidden.clone(),
        start_version: preference_start,
        jobs_log: Some(jobs_log.clone()),
    };

    println!(
        "scheduling retraining for {:.0}s (jobs logged to {})",
        run_for.as_secs_f64(),
        jobs_log.display()
    );
    let (classifier_jobs, preference_jobs) = tokio::join!(
        run_scheduler(classifier_config, data.clone(), run_for),
        run_scheduler(preference_config, data, run_for),
    );
    for record in classifier_jobs?.iter().chain(preference_jobs?.iter()) {
        println!("{}", record.log_line());
    }
    Ok(())
}

/// Run the closed-loop benchmark against an in-process pipeline and write
/// samples plus the rendered report.
pub async fn cmd_bench(
    config: &RunConfig,
    out: Option<&Path>,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    let corpus = read_corpus(&config.paths.data_dir)?;
    let models = read_models(&config.paths.artifacts_dir)?;

    let mut profile = config.load.profile()?;
    if let Some(seed) = seed {
        profile.seed = seed;
    }
    let source: Vec<(u64, String)> = corpus
        .logs
        .iter()
        .map(|l| (l.user_id, l.query_text.clone()))
        .collect();

    let cluster_config = cluster_config(config, corpus, models, Some(config.services.ports()))?;
    let cluster = Cluster::start(cluster_config).await?;
    println!(
        "pipeline up at {}; running {} virtual users for {} measured requests",
        cluster.planer_url, profile.virtual_users, profile.total_requests
    );

    let outcome = run_load(&profile, &cluster.planer_url, &source).await;
    cluster.shutdown().await;
    let outcome = outcome?;

    let dir = out.unwrap_or(&config.paths.results_dir);
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create results directory {}", dir.display()))?;
    let samples_path = dir.join(files::SAMPLES);
    write_samples_csv(&samples_path, &outcome.samples)?;

    let report = build_report(&outcome.samples)?;
    let text = render_text(&report);
    std::fs::write(
        dir.join(files::REPORT_JSON),
        serde_json::to_string_pretty(&report)?,
    )?;
    std::fs::write(dir.join(files::REPORT_TEXT), &text)?;

    println!();
    print!("{text}");
    println!();
    println!(
        "wall time {:.1}s, peak concurrent requests {}, samples in {}",
        outcome.wall_s,
        outcome.max_in_flight,
        samples_path.display()
    );
    Ok(())
}

/// Rebuild the report from a samples file.
pub fn cmd_report(config: &RunConfig, samples: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let rows = read_samples_csv(samples)
        .with_context(|| format!("cannot read samples from {}", samples.display()))?;
    let report = build_report(&rows)
        .with_context(|| format!("cannot build a report from {}", samples.display()))?;
    let text = render_text(&report);

    let dir = match out {
        Some(p) => p.to_path_buf(),
        None => samples
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| config.paths.results_dir.clone()),
    };
    std::fs::create_dir_all(&dir)?;
    std::fs::write(
        dir.join(files::REPORT_JSON),
        serde_json::to_string_pretty(&report)?,
    )?;
    std::fs::write(dir.join(files::REPORT_TEXT), &text)?;
    print!("{text}");
    Ok(())
}

/// Time one serving kernel at one shape.
pub fn cmd_micro(kernel: &str, shape: &str, reps: usize) -> anyhow::Result<()> {
    let kernel: Kernel = kernel.parse().map_err(|e: String| anyhow::anyhow!(e))?;
    let shape = parse_shape(shape)?;
    let stats = micro_bench(kernel, shape, reps)?;
    println!(
        "{} {}x{}x{}: reps {}, min {:.3} us, mean {:.3} us, p99 {:.3} us (checksum {:e})",
        kernel.as_str(),
        shape.m,
        shape.k,
        shape.n,
        stats.reps,
        stats.min_ns as f64 / 1_000.0,
        stats.mean_ns / 1_000.0,
        stats.p99_ns as f64 / 1_000.0,
        stats.checksum
    );
    Ok(())
}

fn parse_shape(text: &str) -> anyhow::Result<BenchShape> {
    let parts: Vec<&str> = text.split('x').collect();
    if parts.len() != 3 {
        bail!("shape must look like MxKxN, e.g. 64x256x256, got {text:?}");
    }
    let dim = |s: &str| -> anyhow::Result<usize> {
        s.parse()
            .with_context(|| format!("bad shape extent {s:?} in {text:?}"))
    };
    Ok(BenchShape {
        m: dim(parts[0])?,
        k: dim(parts[1])?,
        n: dim(parts[2])?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_parses_and_rejects() {
        let s = parse_shape("64x256x256").unwrap();
        assert_eq!((s.m, s.k, s.n), (64, 256, 256));
        assert!(parse_shape("64x256").is_err());
        assert!(parse_shape("ax2x3").is_err());
    }
}
