//! Run reports: aggregation of request records and resource samples, and
//! side-by-side comparison of two reports.
//!
//! Statistics that have no data behind them are `None`, never zero.
//! Percentiles use the nearest-rank rule without interpolation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::scheduler::TaskRecord;
use crate::sim::ResourceSample;
use crate::{Error, Result};

pub const REPORT_SCHEMA: &str = "edgepart.report.v1";

/// End-to-end record of one inference request. Times are milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub request_id: u64,
    /// Node that ran the last partition.
    pub node_id: String,
    pub submit_ms: f64,
    pub start_ms: f64,
    pub end_ms: f64,
    /// Sum of partition execution times.
    pub exec_ms: f64,
    /// Inter-partition transfer time.
    pub comm_ms: f64,
    /// Time spent waiting for an eligible node.
    pub queue_ms: f64,
    pub bytes_moved: u64,
    pub rescheduled: bool,
}

impl RequestRecord {
    pub fn latency_ms(&self) -> f64 {
        self.end_ms - self.submit_ms
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean: Option<f64>,
    pub p50: Option<f64>,
    pub p95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node_id: String,
    pub completed_tasks: u64,
    pub mean_exec_ms: Option<f64>,
    pub cpu_pct: Option<f64>,
    pub mem_mb: Option<f64>,
    pub rx_bytes: u64,
    pub tx_bytes: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub submitted: u64,
    pub completed: u64,
    /// Requests inside the measurement phase; the basis of every statistic.
    pub measured: u64,
    pub rescheduled: u64,
    pub queued: u64,
    pub in_flight: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    pub seed: u64,
    pub measurement_ms: f64,
    pub inference_latency_ms: LatencyStats,
    /// Measured requests per measurement second.
    pub throughput_rps: f64,
    pub comm_overhead_ms: Option<f64>,
    pub cpu_pct: Option<f64>,
    pub mem_mb: Option<f64>,
    /// Bytes moved by measured requests, in MiB.
    pub net_bandwidth_mb: f64,
    pub stability_score: Option<f64>,
    pub scheduling_overhead_ms: Option<f64>,
    pub load_balance_l: f64,
    pub starvation_ms: f64,
    pub counts: RunCounts,
    pub per_node: Vec<NodeReport>,
}

/// Nearest-rank percentile of an ascending slice, `pct` in (0, 100].
pub fn percentile(sorted: &[f64], pct: u32) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let rank = ((pct as usize * n).div_ceil(100)).clamp(1, n);
    Some(sorted[rank - 1])
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, sum) = values.fold((0u64, 0.0), |(n, s), v| (n + 1, s + v));
    (n > 0).then(|| sum / n as f64)
}

/// Mean over windows of the per-window mean.
fn windowed_mean<'a>(
    samples: impl Iterator<Item = &'a ResourceSample>,
    window_ms: f64,
    value: impl Fn(&ResourceSample) -> f64,
) -> Option<f64> {
    let mut windows: BTreeMap<i64, (u64, f64)> = BTreeMap::new();
    for s in samples {
        let w = libm::floor(s.time_ms / window_ms) as i64;
        let e = windows.entry(w).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += value(s);
    }
    mean(windows.values().map(|(n, sum)| sum / *n as f64))
}

/// Tunables of the stability score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityRule {
    pub queue_timeout_ms: f64,
}

/// Builds a report from measurement-phase data.
///
/// `requests`, `tasks` and `samples` must already be restricted to the
/// measurement phase. Run-level fields that the records cannot provide
/// (seed, counts besides `measured`, scheduling overhead, plan balance,
/// starvation) are left at their defaults for the caller to fill in.
pub fn aggregate(
    requests: &[RequestRecord],
    tasks: &[TaskRecord],
    samples: &[ResourceSample],
    window_ms: f64,
    measurement_ms: f64,
    stability: StabilityRule,
) -> MetricsReport {
    let mut latencies: Vec<f64> = requests.iter().map(RequestRecord::latency_ms).collect();
    latencies.sort_by(f64::total_cmp);
    let inference_latency_ms = LatencyStats {
        mean: mean(latencies.iter().copied()),
        p50: percentile(&latencies, 50),
        p95: percentile(&latencies, 95),
    };
    let stable = requests
        .iter()
        .filter(|r| !r.rescheduled && r.queue_ms <= stability.queue_timeout_ms)
        .count();
    let bytes: u64 = requests.iter().map(|r| r.bytes_moved).sum();

    let mut node_ids: Vec<&str> = tasks
        .iter()
        .map(|t| t.node_id.as_str())
        .chain(samples.iter().map(|s| s.node_id.as_str()))
        .collect();
    node_ids.sort_unstable();
    node_ids.dedup();
    let per_node = node_ids
        .into_iter()
        .map(|id| {
            let mine = || tasks.iter().filter(move |t| t.node_id == id);
            let node_samples = || samples.iter().filter(move |s| s.node_id == id);
            let last = node_samples().next_back();
            NodeReport {
                node_id: String::from(id),
                completed_tasks: mine().count() as u64,
                mean_exec_ms: mean(mine().map(|t| t.exec_time)),
                cpu_pct: mean(node_samples().map(|s| s.cpu_pct)),
                mem_mb: mean(node_samples().map(|s| s.mem_used_mib)),
                rx_bytes: last.map_or(0, |s| s.net_rx_bytes),
                tx_bytes: last.map_or(0, |s| s.net_tx_bytes),
            }
        })
        .collect();

    MetricsReport {
        schema: String::from(REPORT_SCHEMA),
        seed: 0,
        measurement_ms,
        inference_latency_ms,
        throughput_rps: if measurement_ms > 0.0 {
            requests.len() as f64 / (measurement_ms / 1000.0)
        } else {
            0.0
        },
        comm_overhead_ms: mean(requests.iter().map(|r| r.comm_ms)),
        cpu_pct: windowed_mean(samples.iter(), window_ms, |s| s.cpu_pct),
        mem_mb: windowed_mean(samples.iter(), window_ms, |s| s.mem_used_mib),
        net_bandwidth_mb: bytes as f64 / (1u64 << 20) as f64,
        stability_score: (!requests.is_empty()).then(|| stable as f64 / requests.len() as f64),
        scheduling_overhead_ms: None,
        load_balance_l: 0.0,
        starvation_ms: 0.0,
        counts: RunCounts {
            measured: requests.len() as u64,
            ..RunCounts::default()
        },
        per_node,
    }
}

/// Which way a metric improves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Better {
    Lower,
    Higher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub candidate: Option<f64>,
    pub baseline: Option<f64>,
    /// `(candidate - baseline) / baseline * 100`; `None` when either side is
    /// missing or the baseline is zero.
    pub delta_pct: Option<f64>,
    pub better: Better,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

pub fn percent_delta(candidate: f64, baseline: f64) -> Option<f64> {
    (baseline != 0.0).then(|| (candidate - baseline) / baseline * 100.0)
}

fn metric_rows(r: &MetricsReport) -> [(&'static str, Option<f64>, Better); 12] {
    [
        ("inference_latency_mean_ms", r.inference_latency_ms.mean, Better::Lower),
        ("inference_latency_p50_ms", r.inference_latency_ms.p50, Better::Lower),
        ("inference_latency_p95_ms", r.inference_latency_ms.p95, Better::Lower),
        ("throughput_rps", Some(r.throughput_rps), Better::Higher),
        ("comm_overhead_ms", r.comm_overhead_ms, Better::Lower),
        ("cpu_pct", r.cpu_pct, Better::Lower),
        ("mem_mb", r.mem_mb, Better::Lower),
        ("net_bandwidth_mb", Some(r.net_bandwidth_mb), Better::Lower),
        ("stability_score", r.stability_score, Better::Higher),
        ("scheduling_overhead_ms", r.scheduling_overhead_ms, Better::Lower),
        ("load_balance_l", Some(r.load_balance_l), Better::Lower),
        ("rescheduled", Some(r.counts.rescheduled as f64), Better::Lower),
    ]
}

/// Per-metric percentage change of `candidate` relative to `baseline`.
pub fn compare(candidate: &MetricsReport, baseline: &MetricsReport) -> Result<ComparisonTable> {
    if candidate.schema != baseline.schema {
        return Err(Error::SchemaMismatch(format!(
            "`{}` vs `{}`",
            candidate.schema, baseline.schema
        )));
    }
    let rows = metric_rows(candidate)
        .into_iter()
        .zip(metric_rows(baseline))
        .map(|((metric, c, better), (_, b, _))| ComparisonRow {
            metric: String::from(metric),
            candidate: c,
            baseline: b,
            delta_pct: c.zip(b).and_then(|(c, b)| percent_delta(c, b)),
            better,
        })
        .collect();
    Ok(ComparisonTable { rows })
}
