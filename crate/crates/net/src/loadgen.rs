//! Closed-loop load generator: a fixed population of virtual users, each
//! cycling think → request → response against the planer, replaying
//! historical queries. Per-user schedules are deterministic given the
//! profile seed.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use esbench_core::metrics::RequestSample;
use esbench_core::CoreError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::NetError;
use crate::wire::{ErrorResponse, SearchRequest, SearchResponse};

/// Think-time model between a user's consecutive requests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThinkDistribution {
    /// Exponentially distributed with the given mean, in seconds.
    Exponential { mean_s: f64 },
    /// The same pause every time, in seconds.
    Fixed { seconds: f64 },
}

#[derive(Debug, Clone)]
pub struct LoadProfile {
    pub virtual_users: usize,
    /// Measured (post-warmup) requests to collect; the run stops once this
    /// many have completed. Failed requests consume budget too.
    pub total_requests: usize,
    /// Requests sent before this much of the run has elapsed are recorded
    /// but flagged as warmup and never consume the measured budget.
    pub warmup: Duration,
    pub think: ThinkDistribution,
    pub seed: u64,
    /// Result-size cap forwarded with every search request.
    pub limit: usize,
}

impl LoadProfile {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.virtual_users == 0 {
            return Err(CoreError::InvalidConfig {
                field: "virtual_users",
                reason: "must be at least 1".to_string(),
            });
        }
        if self.total_requests == 0 {
            return Err(CoreError::InvalidConfig {
                field: "total_requests",
                reason: "must be at least 1".to_string(),
            });
        }
        if self.limit == 0 {
            return Err(CoreError::InvalidConfig {
                field: "limit",
                reason: "must be at least 1".to_string(),
            });
        }
        let think_param = match self.think {
            ThinkDistribution::Exponential { mean_s } => ("think.mean_s", mean_s),
            ThinkDistribution::Fixed { seconds } => ("think.seconds", seconds),
        };
        if !think_param.1.is_finite() || think_param.1 < 0.0 {
            return Err(CoreError::InvalidConfig {
                field: think_param.0,
                reason: format!("must be finite and non-negative, got {}", think_param.1),
            });
        }
        Ok(())
    }
}

/// Draw one think time, in seconds. Exponential uses inverse-CDF sampling
/// on u drawn from (0, 1], so the result is always finite and u = 1 maps
/// to zero.
pub fn sample_think_seconds(think: ThinkDistribution, rng: &mut impl Rng) -> f64 {
    match think {
        ThinkDistribution::Fixed { seconds } => seconds,
        ThinkDistribution::Exponential { mean_s } => {
            let u = 1.0 - rng.gen::<f64>();
            -mean_s * u.ln()
        }
    }
}

/// One planned request of a virtual user's schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRequest {
    /// Index into the shared query source.
    pub slot: usize,
    pub request_id: String,
    /// Pause before this request is sent.
    pub think_s: f64,
}

/// Deterministic per-user schedule: virtual user `u` replays source slots
/// u, u + U, u + 2U, … (mod source length, U = virtual users) with think
/// times from its own seeded stream. The live run and [`user_schedule`]
/// both step this type, so they cannot disagree.
pub struct UserScript {
    user_index: usize,
    stride: usize,
    think: ThinkDistribution,
    rng: ChaCha20Rng,
    seq: usize,
}

impl UserScript {
    pub fn new(profile: &LoadProfile, user_index: usize) -> Self {
        UserScript {
            user_index,
            stride: profile.virtual_users,
            think: profile.think,
            rng: ChaCha20Rng::seed_from_u64(profile.seed.wrapping_add(user_index as u64)),
            seq: 0,
        }
    }

    pub fn next_request(&mut self, source_len: usize) -> PlannedRequest {
        let slot = (self.user_index + self.seq * self.stride) % source_len;
        let request_id = format!("u{}-{}", self.user_index, self.seq);
        let think_s = sample_think_seconds(self.think, &mut self.rng);
        self.seq += 1;
        PlannedRequest {
            slot,
            request_id,
            think_s,
        }
    }
}

/// The first `steps` planned requests for one virtual user. Pure: depends
/// only on the profile, the source length, and the user index.
pub fn user_schedule(
    profile: &LoadProfile,
    source_len: usize,
    user_index: usize,
    steps: usize,
) -> Vec<PlannedRequest> {
    let mut script = UserScript::new(profile, user_index);
    (0..steps).map(|_| script.next_request(source_len)).collect()
}

/// Everything a load run produced: per-request samples (sorted by send
/// time, then request id), the high-water mark of concurrently outstanding
/// requests, and total wall time including warmup.
#[derive(Debug)]
pub struct RunOutcome {
    pub samples: Vec<RequestSample>,
    pub max_in_flight: usize,
    pub wall_s: f64,
}

/// Drive the closed loop against a planer. `source` is the replayed
/// (user id, query text) history. Returns once `total_requests` measured
/// samples have completed; the outcome also carries warmup samples,
/// flagged as such.
pub async fn run_load(
    profile: &LoadProfile,
    planer_url: &str,
    source: &[(u64, String)],
) -> Result<RunOutcome, NetError> {
    profile.validate()?;
    if source.is_empty() {
        return Err(CoreError::EmptyInput("query source").into());
    }

    let client = reqwest::Client::new();
    let health_url = format!("{planer_url}/health");
    let resp = client
        .get(&health_url)
        .timeout(Duration::from_secs(2))
        .send()
        .await
        .map_err(|e| NetError::Startup(format!("planer health check failed: {e}")))?;
    if !resp.status().is_success() {
        return Err(NetError::Startup(format!(
            "planer health check returned status {}",
            resp.status()
        )));
    }

    let run_start = Instant::now();
    let warmup_us = profile.warmup.as_micros() as u64;
    let total = profile.total_requests;
    let measured = Arc::new(AtomicUsize::new(0));
    let in_flight = Arc::new(AtomicUsize::new(0));
    let max_in_flight = Arc::new(AtomicUsize::new(0));
    let source: Arc<Vec<(u64, String)>> = Arc::new(source.to_vec());
    let search_url = format!("{planer_url}/search");

    let mut tasks = Vec::with_capacity(profile.virtual_users);
    for user_index in 0..profile.virtual_users {
        let client = client.clone();
        let search_url = search_url.clone();
        let source = Arc::clone(&source);
        let measured = Arc::clone(&measured);
        let in_flight = Arc::clone(&in_flight);
        let max_in_flight = Arc::clone(&max_in_flight);
        let mut script = UserScript::new(profile, user_index);

        tasks.push(tokio::spawn(async move {
            let mut samples: Vec<RequestSample> = Vec::new();
            loop {
                if measured.load(Ordering::Relaxed) >= total {
                    break;
                }
                let plan = script.next_request(source.len());
                if plan.think_s > 0.0 {
                    tokio::time::sleep(Duration::from_secs_f64(plan.think_s)).await;
                }
                let (user_id, query_text) = &source[plan.slot];

                let send_us = run_start.elapsed().as_micros() as u64;
                let now_in_flight = in_flight.fetch_add(1, Ordering::Relaxed) + 1;
                max_in_flight.fetch_max(now_in_flight, Ordering::Relaxed);
                let result = client
                    .post(&search_url)
                    .json(&SearchRequest {
                        request_id: plan.request_id.clone(),
                        user_id: *user_id,
                        query_text: query_text.clone(),
                        limit: profile.limit,
                    })
                    .send()
                    .await;
                let recv_us = run_start.elapsed().as_micros() as u64;
                in_flight.fetch_sub(1, Ordering::Relaxed);

                let (success, stages) = match result {
                    Ok(resp) if resp.status().is_success() => {
                        match resp.json::<SearchResponse>().await {
                            Ok(body) => (true, body.timings),
                            Err(_) => (false, Vec::new()),
                        }
                    }
                    Ok(resp) => {
                        let stages = match resp.json::<ErrorResponse>().await {
                            Ok(body) => body.timings,
                            Err(_) => Vec::new(),
                        };
                        (false, stages)
                    }
                    Err(_) => (false, Vec::new()),
                };

                let in_warmup = send_us < warmup_us;
                if !in_warmup {
                    // The budget is claimed after completion, so exactly
                    // `total` measured samples survive: anything completing
                    // after the budget filled is dropped.
                    let already = measured.fetch_add(1, Ordering::Relaxed);
                    if already >= total {
                        break;
                    }
                }
                samples.push(RequestSample {
                    request_id: plan.request_id,
                    send_us,
                    recv_us,
                    latency_us: recv_us.saturating_sub(send_us),
                    success,
                    in_warmup,
                    stages,
                });
            }
            samples
        }));
    }

    let mut all: Vec<RequestSample> = Vec::new();
    for task in tasks {
        let samples = task
            .await
            .map_err(|e| NetError::Transport(format!("virtual user task failed: {e}")))?;
        all.extend(samples);
    }
    all.sort_by(|a, b| {
        a.send_us
            .cmp(&b.send_us)
            .then_with(|| a.request_id.cmp(&b.request_id))
    });

    Ok(RunOutcome {
        samples: all,
        max_in_flight: max_in_flight.load(Ordering::Relaxed),
        wall_s: run_start.elapsed().as_secs_f64(),
    })
}
