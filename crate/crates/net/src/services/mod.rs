//! The four online service roles: planer, recommender, searcher, ranker.
//!
//! Every service is an axum router over shared state; the same routers run
//! single-process (all-in-one) or as separate processes, always speaking
//! HTTP/1.1 with JSON bodies over loopback or LAN.

pub mod cluster;
pub mod planer;
pub mod ranker;
pub mod recommender;
pub mod searcher;

use std::net::SocketAddr;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use base64::Engine;
use esbench_core::hash::fnv1a64;
use esbench_core::index::IndexBundle;
use esbench_core::metrics::StageTiming;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use crate::error::NetError;
use crate::state::Slot;
use crate::wire::{ErrorResponse, HealthResponse, InstallIndexOutcome, InstallIndexRequest};

pub use cluster::{Cluster, ClusterConfig};
pub use planer::{spawn_planer, PlanerConfig, PlanerState};
pub use ranker::{spawn_ranker, RankerConfig, RankerMode, RankerState};
pub use recommender::{spawn_recommender, RecommenderState};
pub use searcher::{spawn_searcher, SearcherState};

/// Canonical stage names. These strings are the contract between services,
/// samples, and the report: every timing a service emits uses one of them.
pub mod stages {
    pub const PLANER: &str = esbench_core::metrics::PARENT_STAGE;
    pub const QUERY_PARSE: &str = "recommender.query_parse";
    pub const USER_DB: &str = "recommender.user_db";
    pub const CLASSIFY: &str = "recommender.classify";
    pub const SERVING: &str = "recommender.serving";
    pub const SEARCH_HIGH: &str = "searcher.high";
    pub const SEARCH_MEDIUM: &str = "searcher.medium";
    pub const SEARCH_LOW: &str = "searcher.low";
    pub const RANKER: &str = "ranker";
    pub const PRODUCT_DB: &str = "product_db";

    /// All ten stages of a healthy search request.
    pub const ALL: [&str; 10] = [
        PLANER,
        QUERY_PARSE,
        USER_DB,
        CLASSIFY,
        SERVING,
        SEARCH_HIGH,
        SEARCH_MEDIUM,
        SEARCH_LOW,
        RANKER,
        PRODUCT_DB,
    ];
}

/// Process-wide monotonic clock origin. Stage start offsets are reported
/// relative to this; durations never depend on it.
fn clock_origin() -> Instant {
    static ORIGIN: OnceLock<Instant> = OnceLock::new();
    *ORIGIN.get_or_init(Instant::now)
}

/// Microseconds since the process clock origin.
pub(crate) fn now_us() -> u64 {
    clock_origin().elapsed().as_micros() as u64
}

/// Times one stage.
pub(crate) struct Stopwatch {
    start: Instant,
    start_us: u64,
}

impl Stopwatch {
    pub fn begin() -> Self {
        Stopwatch {
            start: Instant::now(),
            start_us: now_us(),
        }
    }

    pub fn finish(&self, stage: &str) -> StageTiming {
        StageTiming {
            stage: stage.to_string(),
            start_us: self.start_us,
            duration_us: self.start.elapsed().as_micros() as u64,
        }
    }
}

/// JSON error reply carrying the failed stage and any completed timings.
pub(crate) fn error_response(
    status: StatusCode,
    failed_stage: &str,
    error: String,
    timings: Vec<StageTiming>,
) -> Response {
    (
        status,
        Json(ErrorResponse {
            error,
            failed_stage: failed_stage.to_string(),
            timings,
        }),
    )
        .into_response()
}

pub(crate) fn health(service: &'static str) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".to_string(),
        service: service.to_string(),
    })
}

/// An index snapshot installed in a service, remembered with the checksum
/// of the snapshot bytes it came from.
#[derive(Debug, Clone)]
pub struct InstalledIndex {
    pub bundle: IndexBundle,
    pub checksum: u64,
}

impl InstalledIndex {
    pub fn from_bundle(bundle: IndexBundle) -> Self {
        let checksum = bundle.checksum();
        InstalledIndex { bundle, checksum }
    }
}

/// Shared handler body for `POST /install_index`: decode, validate, swap.
/// A malformed snapshot leaves the previous index in place.
pub(crate) fn install_snapshot(
    slot: &Slot<InstalledIndex>,
    req: &InstallIndexRequest,
) -> (StatusCode, Json<InstallIndexOutcome>) {
    let reject = |message: String| {
        (
            StatusCode::BAD_REQUEST,
            Json(InstallIndexOutcome {
                accepted: false,
                product_count: 0,
                checksum: String::new(),
                message,
            }),
        )
    };
    let bytes = match base64::engine::general_purpose::STANDARD.decode(&req.snapshot) {
        Ok(b) => b,
        Err(e) => return reject(format!("snapshot is not valid base64: {e}")),
    };
    let bundle = match esbench_core::index::read_snapshot(&bytes) {
        Ok(b) => b,
        Err(e) => return reject(format!("snapshot rejected: {e}")),
    };
    let checksum = fnv1a64(&bytes);
    let product_count = bundle.product_count();
    slot.replace(InstalledIndex { bundle, checksum });
    (
        StatusCode::OK,
        Json(InstallIndexOutcome {
            accepted: true,
            product_count,
            checksum: format!("{checksum:016x}"),
            message: "installed".to_string(),
        }),
    )
}

/// A running service: its bound address, shutdown trigger, and task.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<()>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Signal graceful shutdown and wait briefly; abort if connections
    /// linger past the grace period.
    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if tokio::time::timeout(Duration::from_secs(2), &mut self.task)
            .await
            .is_err()
        {
            self.task.abort();
        }
    }
}

/// Bind `port` on loopback (0 picks an ephemeral port) and serve `router`
/// until the handle's shutdown fires.
pub(crate) async fn serve_router(
    router: Router,
    port: u16,
    service: &'static str,
) -> Result<ServerHandle, NetError> {
    let listener = TcpListener::bind(("127.0.0.1", port))
        .await
        .map_err(|e| NetError::Startup(format!("{service}: cannot bind 127.0.0.1:{port}: {e}")))?;
    let addr = listener
        .local_addr()
        .map_err(|e| NetError::Startup(format!("{service}: no local addr: {e}")))?;
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let result = axum::serve(listener, router)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
        if let Err(e) = result {
            tracing::warn!(service, error = %e, "server exited with error");
        }
    });
    tracing::info!(service, %addr, "listening");
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        task,
    })
}
