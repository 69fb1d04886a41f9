//! Latency accounting: per-request samples, percentile math, scope
//! aggregation, the benchmark report, and sample CSV persistence.
//!
//! Latencies are stored as integer microseconds and reported as
//! milliseconds. Percentiles use the nearest-rank definition computed in
//! integer arithmetic, so results are exact order statistics of the
//! recorded values — never interpolated, never subject to float rounding
//! on the rank.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// Stage whose duration equals the whole downstream handler; it nests the
/// other stages and is excluded from the stage-work sum when computing the
/// communication residual.
pub const PARENT_STAGE: &str = "planer";

/// Scope name for whole-request latency.
pub const TOTAL_SCOPE: &str = "total";

/// Scope name for time not attributed to any stage: transport, queuing
/// outside handlers, serialization.
pub const COMMUNICATION_SCOPE: &str = "communication";

/// 1-based nearest rank of percentile `p` among `n` values: the smallest
/// rank `r` with `r/n >= p/100`. `p` is read to four decimal places and the
/// comparison is exact integer arithmetic.
pub fn nearest_rank(p: f64, n: usize) -> Result<usize, CoreError> {
    if !p.is_finite() || p <= 0.0 || p > 100.0 {
        return Err(CoreError::InvalidConfig {
            field: "percentile",
            reason: format!("p must be in (0, 100], got {p}"),
        });
    }
    if n == 0 {
        return Err(CoreError::EmptyInput("percentile of zero values"));
    }
    // p as an integer count of 1e-4 percent units; p/100 == scale/1e6.
    let scale = (p * 10_000.0).round() as u128;
    let rank = (scale * n as u128).div_ceil(1_000_000) as usize;
    Ok(rank.clamp(1, n))
}

/// Nearest-rank percentile of `values` (need not be sorted). Exact: always
/// returns one of the input values.
pub fn percentile(values: &[u64], p: f64) -> Result<u64, CoreError> {
    let rank = nearest_rank(p, values.len())?;
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    Ok(sorted[rank - 1])
}

/// One timed span inside a request, named by the stage that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    /// Microseconds from the stage owner's clock origin; informational.
    pub start_us: u64,
    pub duration_us: u64,
}

/// One client-observed request with its server-side stage breakdown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestSample {
    pub request_id: String,
    /// Send/receive instants, microseconds since the run's clock origin.
    pub send_us: u64,
    pub recv_us: u64,
    pub latency_us: u64,
    pub success: bool,
    pub in_warmup: bool,
    pub stages: Vec<StageTiming>,
}

/// A bag of latencies for one scope, aggregated on demand.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LatencyDistribution {
    values_us: Vec<u64>,
}

impl LatencyDistribution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, value_us: u64) {
        self.values_us.push(value_us);
    }

    pub fn merge(&mut self, other: &LatencyDistribution) {
        self.values_us.extend_from_slice(&other.values_us);
    }

    pub fn len(&self) -> usize {
        self.values_us.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values_us.is_empty()
    }

    /// The recorded values in non-decreasing order.
    pub fn sorted_values_us(&self) -> Vec<u64> {
        let mut sorted = self.values_us.clone();
        sorted.sort_unstable();
        sorted
    }

    /// Summarize into millisecond statistics. Errors when empty.
    pub fn stats(&self) -> Result<ScopeStats, CoreError> {
        if self.values_us.is_empty() {
            return Err(CoreError::EmptyInput("latency distribution"));
        }
        let mut sorted = self.values_us.clone();
        sorted.sort_unstable();
        let n = sorted.len();
        let sum: u128 = sorted.iter().map(|&v| v as u128).sum();
        let to_ms = |us: u64| us as f64 / 1_000.0;
        Ok(ScopeStats {
            count: n,
            avg_ms: sum as f64 / n as f64 / 1_000.0,
            p90_ms: to_ms(sorted[nearest_rank(90.0, n)? - 1]),
            p99_ms: to_ms(sorted[nearest_rank(99.0, n)? - 1]),
            min_ms: to_ms(sorted[0]),
            max_ms: to_ms(sorted[n - 1]),
        })
    }
}

/// Millisecond summary statistics for one scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeStats {
    pub count: usize,
    pub avg_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// The benchmark result: run-level counters plus statistics per scope.
/// Scopes are the whole request (`total`), every stage name that appeared,
/// per-service rollups (`recommender`, `searcher`: the per-request sum of
/// that service's stages), and the `communication` residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub measured_requests: usize,
    pub failed_requests: usize,
    /// First measured send to last measured receive, in seconds.
    pub elapsed_s: f64,
    /// Measured requests (successes and failures) per elapsed second.
    pub throughput_rps: f64,
    pub scopes: BTreeMap<String, ScopeStats>,
}

/// Rollup scopes: name plus the stage prefix it sums per request.
const ROLLUPS: [(&str, &str); 2] = [("recommender", "recommender."), ("searcher", "searcher.")];

/// Aggregate client samples into a report. Warmup samples are dropped.
/// Failed requests count toward throughput and the failure counter but
/// contribute no latency values. Errors if no measured successful sample
/// exists.
pub fn build_report(samples: &[RequestSample]) -> Result<BenchReport, CoreError> {
    let measured: Vec<&RequestSample> = samples.iter().filter(|s| !s.in_warmup).collect();
    if measured.is_empty() {
        return Err(CoreError::EmptyInput("no measured samples"));
    }
    let failed = measured.iter().filter(|s| !s.success).count();
    if failed == measured.len() {
        return Err(CoreError::EmptyInput("no successful measured samples"));
    }

    let mut scopes: BTreeMap<String, LatencyDistribution> = BTreeMap::new();
    for sample in measured.iter().filter(|s| s.success) {
        scopes
            .entry(TOTAL_SCOPE.to_string())
            .or_default()
            .record(sample.latency_us);

        let mut stage_work_us: u64 = 0;
        for timing in &sample.stages {
            scopes
                .entry(timing.stage.clone())
                .or_default()
                .record(timing.duration_us);
            if timing.stage != PARENT_STAGE {
                stage_work_us = stage_work_us.saturating_add(timing.duration_us);
            }
        }
        scopes
            .entry(COMMUNICATION_SCOPE.to_string())
            .or_default()
            .record(sample.latency_us.saturating_sub(stage_work_us));

        for (rollup, prefix) in ROLLUPS {
            let mut sum: u64 = 0;
            let mut seen = false;
            for timing in sample.stages.iter().filter(|t| t.stage.starts_with(prefix)) {
                sum = sum.saturating_add(timing.duration_us);
                seen = true;
            }
            if seen {
                scopes.entry(rollup.to_string()).or_default().record(sum);
            }
        }
    }

    let first_send = measured.iter().map(|s| s.send_us).min().unwrap();
    let last_recv = measured.iter().map(|s| s.recv_us).max().unwrap();
    let elapsed_s = (last_recv.saturating_sub(first_send) as f64 / 1_000_000.0).max(1e-6);

    let mut stats = BTreeMap::new();
    for (name, dist) in &scopes {
        stats.insert(name.clone(), dist.stats()?);
    }

    Ok(BenchReport {
        measured_requests: measured.len(),
        failed_requests: failed,
        elapsed_s,
        throughput_rps: measured.len() as f64 / elapsed_s,
        scopes: stats,
    })
}

fn panel(out: &mut String, title: &str, report: &BenchReport, rows: &[&str]) {
    let _ = writeln!(out, "== {title} ==");
    let _ = writeln!(
        out,
        "{:<28} {:>8} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "scope", "count", "avg_ms", "p90_ms", "p99_ms", "min_ms", "max_ms"
    );
    for name in rows {
        if let Some(s) = report.scopes.get(*name) {
            let _ = writeln!(
                out,
                "{:<28} {:>8} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
                name, s.count, s.avg_ms, s.p90_ms, s.p99_ms, s.min_ms, s.max_ms
            );
        }
    }
}

/// Render the three-panel text summary: end-to-end, per-module, and the
/// recommendation pipeline's internal stages.
pub fn render_text(report: &BenchReport) -> String {
    let mut out = String::new();
    panel(&mut out, "end-to-end", report, &[TOTAL_SCOPE]);
    let _ = writeln!(
        out,
        "throughput: {:.1} req/s ({} measured, {} failed, {:.2} s)",
        report.throughput_rps, report.measured_requests, report.failed_requests, report.elapsed_s
    );
    let _ = writeln!(out);
    panel(
        &mut out,
        "per module",
        report,
        &[
            "recommender",
            "searcher",
            "ranker",
            "product_db",
            COMMUNICATION_SCOPE,
        ],
    );
    let _ = writeln!(out);
    panel(
        &mut out,
        "recommendation stages",
        report,
        &[
            "recommender.query_parse",
            "recommender.user_db",
            "recommender.classify",
            "recommender.serving",
        ],
    );
    out
}

const CSV_HEADER: &str =
    "request_id,send_us,recv_us,latency_us,success,in_warmup,stage,stage_duration_us";

/// Write one CSV row per stage plus a `total` row per request. Stage start
/// offsets are not persisted; reports rebuilt from the CSV are identical
/// because aggregation uses only durations.
pub fn write_samples_csv(path: &Path, samples: &[RequestSample]) -> Result<(), CoreError> {
    let mut out = String::with_capacity(64 * (samples.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in samples {
        if s.request_id.contains(',') || s.request_id.contains('\n') {
            return Err(CoreError::Inconsistent(format!(
                "request_id {:?} cannot be stored in csv",
                s.request_id
            )));
        }
        let prefix = format!(
            "{},{},{},{},{},{}",
            s.request_id, s.send_us, s.recv_us, s.latency_us, s.success, s.in_warmup
        );
        for t in &s.stages {
            let _ = writeln!(out, "{prefix},{},{}", t.stage, t.duration_us);
        }
        let _ = writeln!(out, "{prefix},{TOTAL_SCOPE},{}", s.latency_us);
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(
    field: &str,
    line: usize,
    what: &str,
) -> Result<T, CoreError> {
    field.parse().map_err(|_| CoreError::MalformedRecord {
        line,
        reason: format!("bad {what}: {field:?}"),
    })
}

/// Read samples back from `write_samples_csv` output. Stage start offsets
/// are not stored in the CSV, so they come back as zero.
pub fn read_samples_csv(path: &Path) -> Result<Vec<RequestSample>, CoreError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(CoreError::MalformedRecord {
                line: 1,
                reason: format!("unexpected header {header:?}"),
            });
        }
        None => return Err(CoreError::EmptyInput("samples csv")),
    }

    let mut samples: Vec<RequestSample> = Vec::new();
    let mut saw_total_for_current = true;
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 8 {
            return Err(CoreError::MalformedRecord {
                line,
                reason: format!("expected 8 fields, got {}", fields.len()),
            });
        }
        let request_id = fields[0].to_string();
        let send_us: u64 = parse_field(fields[1], line, "send_us")?;
        let recv_us: u64 = parse_field(fields[2], line, "recv_us")?;
        let latency_us: u64 = parse_field(fields[3], line, "latency_us")?;
        let success: bool = parse_field(fields[4], line, "success")?;
        let in_warmup: bool = parse_field(fields[5], line, "in_warmup")?;
        let stage = fields[6];
        let duration_us: u64 = parse_field(fields[7], line, "stage_duration_us")?;

        let start_new = samples.last().is_none_or(|s| s.request_id != request_id);
        if start_new {
            if !saw_total_for_current {
                return Err(CoreError::MalformedRecord {
                    line,
                    reason: "previous request has no total row".into(),
                });
            }
            samples.push(RequestSample {
                request_id,
                send_us,
                recv_us,
                latency_us,
                success,
                in_warmup,
                stages: Vec::new(),
            });
            saw_total_for_current = false;
        }
        let current = samples.last_mut().unwrap();
        if stage == TOTAL_SCOPE {
            if duration_us != current.latency_us {
                return Err(CoreError::MalformedRecord {
                    line,
                    reason: format!(
                        "total row duration {duration_us} != latency {}",
                        current.latency_us
                    ),
                });
            }
            saw_total_for_current = true;
        } else {
            current.stages.push(StageTiming {
                stage: stage.to_string(),
                start_us: 0,
                duration_us,
            });
        }
    }
    if !saw_total_for_current {
        return Err(CoreError::MalformedRecord {
            line: text.lines().count(),
            reason: "last request has no total row".into(),
        });
    }
    Ok(samples)
}
