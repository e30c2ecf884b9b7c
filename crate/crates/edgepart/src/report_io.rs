//! Report documents: canonical JSON, flat CSV rows and comparison tables.
//!
//! JSON reports are pretty-printed with keys in sorted order, so the same
//! report always produces the same bytes and parsing it back is lossless.

use std::fmt::Write as _;
use std::path::Path;

use edgepart_core::metrics::{ComparisonTable, MetricsReport, REPORT_SCHEMA};
use serde::Serialize;

use crate::error::{Error, Result, read, write};

/// Pretty JSON with sorted keys and a trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json's Value keeps object keys in a BTreeMap
    let v = serde_json::to_value(value).map_err(|e| Error::Usage(format!("cannot encode value: {e}")))?;
    let mut s = serde_json::to_string_pretty(&v).expect("a Value always serializes");
    s.push('\n');
    Ok(s)
}

pub fn parse_report(text: &str, origin: &str) -> Result<MetricsReport> {
    let syntax = |e: serde_json::Error| Error::Syntax {
        origin: origin.to_string(),
        line: e.line(),
        message: e.to_string(),
    };
    let v: serde_json::Value = serde_json::from_str(text).map_err(syntax)?;
    match v.get("schema").and_then(|s| s.as_str()) {
        Some(REPORT_SCHEMA) => {}
        found => {
            return Err(Error::invalid(
                origin,
                edgepart_core::Error::SchemaMismatch(format!(
                    "expected `{REPORT_SCHEMA}`, found {}",
                    found.map_or_else(|| "no schema".to_string(), |s| format!("`{s}`"))
                )),
            ));
        }
    }
    serde_json::from_value(v).map_err(|e| {
        Error::invalid(
            origin,
            edgepart_core::Error::SchemaMismatch(format!("report does not match `{REPORT_SCHEMA}`: {e}")),
        )
    })
}

pub fn read_report(path: &Path) -> Result<MetricsReport> {
    parse_report(&read(path)?, &path.display().to_string())
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<()> {
    write(path, &to_canonical_json(report)?)
}

pub const CSV_HEADER: [&str; 22] = [
    "label",
    "schema",
    "seed",
    "measurement_ms",
    "latency_mean_ms",
    "latency_p50_ms",
    "latency_p95_ms",
    "throughput_rps",
    "comm_overhead_ms",
    "cpu_pct",
    "mem_mb",
    "net_bandwidth_mb",
    "stability_score",
    "scheduling_overhead_ms",
    "load_balance_l",
    "starvation_ms",
    "submitted",
    "completed",
    "measured",
    "rescheduled",
    "queued",
    "in_flight",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_row(label: &str, r: &MetricsReport) -> Vec<String> {
    let c = &r.counts;
    vec![
        label.to_string(),
        r.schema.clone(),
        r.seed.to_string(),
        r.measurement_ms.to_string(),
        opt(r.inference_latency_ms.mean),
        opt(r.inference_latency_ms.p50),
        opt(r.inference_latency_ms.p95),
        r.throughput_rps.to_string(),
        opt(r.comm_overhead_ms),
        opt(r.cpu_pct),
        opt(r.mem_mb),
        r.net_bandwidth_mb.to_string(),
        opt(r.stability_score),
        opt(r.scheduling_overhead_ms),
        r.load_balance_l.to_string(),
        r.starvation_ms.to_string(),
        c.submitted.to_string(),
        c.completed.to_string(),
        c.measured.to_string(),
        c.rescheduled.to_string(),
        c.queued.to_string(),
        c.in_flight.to_string(),
    ]
}

/// One CSV row per labelled report under [`CSV_HEADER`]. Missing statistics
/// are empty cells.
pub fn reports_to_csv(reports: &[(&str, &MetricsReport)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("writing to memory");
    for (label, r) in reports {
        w.write_record(csv_row(label, r)).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("csv output is utf-8")
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.3}"),
        None => "-".to_string(),
    }
}

/// Plain-text table with one metric per row.
pub fn format_comparison(table: &ComparisonTable) -> String {
    let width = table.rows.iter().map(|r| r.metric.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>14}  {:>14}  {:>9}  better",
        "metric", "candidate", "baseline", "delta%"
    );
    for r in &table.rows {
        let delta = r.delta_pct.map_or_else(|| "-".to_string(), |d| format!("{d:+.1}"));
        let better = match r.better {
            edgepart_core::metrics::Better::Lower => "lower",
            edgepart_core::metrics::Better::Higher => "higher",
        };
        let _ = writeln!(
            out,
            "{:<width$}  {:>14}  {:>14}  {:>9}  {better}",
            r.metric,
            cell(r.candidate),
            cell(r.baseline),
            delta
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use edgepart_core::metrics::{LatencyStats, NodeReport, RunCounts, compare};

    pub(crate) fn sample() -> MetricsReport {
        MetricsReport {
            schema: REPORT_SCHEMA.to_string(),
            seed: 42,
            measurement_ms: 10_000.0,
            inference_latency_ms: LatencyStats {
                mean: Some(234.5),
                p50: Some(230.0),
                p95: Some(251.25),
            },
            throughput_rps: 4.2,
            comm_overhead_ms: Some(0.1 + 0.2),
            cpu_pct: None,
            mem_mb: Some(64.0),
            net_bandwidth_mb: 1.0 / 3.0,
            stability_score: Some(1.0),
            scheduling_overhead_ms: Some(0.05),
            load_balance_l: 0.0,
            starvation_ms: 0.0,
            counts: RunCounts {
                submitted: 50,
                completed: 48,
                measured: 42,
                rescheduled: 0,
                queued: 0,
                in_flight: 2,
            },
            per_node: vec![NodeReport {
                node_id: "a".into(),
                completed_tasks: 48,
                mean_exec_ms: Some(229.0),
                cpu_pct: None,
                mem_mb: Some(64.0),
                rx_bytes: 7,
                tx_bytes: 0,
            }],
        }
    }

    #[test]
    fn json_round_trip_is_lossless_and_stable() {
        let r = sample();
        let text = to_canonical_json(&r).unwrap();
        let back = parse_report(&text, "r.json").unwrap();
        assert_eq!(back, r);
        assert_eq!(to_canonical_json(&back).unwrap(), text);
        // keys sorted at the top level
        let keys: Vec<&str> = text
            .lines()
            .filter(|l| l.starts_with("  \"") && !l.starts_with("   "))
            .map(|l| l.trim().split('"').nth(1).unwrap())
            .collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        assert_eq!(keys, sorted);
        assert!(text.contains("\"cpu_pct\": null"));
    }

    #[test]
    fn schema_is_checked() {
        let text = to_canonical_json(&sample()).unwrap().replace(REPORT_SCHEMA, "other.v9");
        let err = parse_report(&text, "r.json").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("other.v9"), "{err}");
        let err = parse_report("{\"schema\": \"edgepart.report.v1\"}", "r.json").unwrap_err();
        assert!(matches!(
            err,
            Error::Invalid {
                source: edgepart_core::Error::SchemaMismatch(_),
                ..
            }
        ));
        assert!(matches!(parse_report("{", "r.json"), Err(Error::Syntax { .. })));
    }

    #[test]
    fn csv_has_fixed_header_and_empty_markers() {
        let r = sample();
        let text = reports_to_csv(&[("x", &r)]);
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER.to_vec());
        let row = rd.records().next().unwrap().unwrap();
        assert_eq!(&row[0], "x");
        assert_eq!(&row[9], "");
        assert_eq!(row[4].parse::<f64>().unwrap(), 234.5);
        assert_eq!(row[11].parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn comparison_table_text() {
        let a = sample();
        let mut b = sample();
        b.inference_latency_ms.mean = Some(469.0);
        let text = format_comparison(&compare(&a, &b).unwrap());
        let line = text
            .lines()
            .find(|l| l.starts_with("inference_latency_mean_ms"))
            .unwrap();
        assert!(line.contains("-50.0"), "{line}");
        assert!(text.lines().any(|l| l.starts_with("cpu_pct") && l.contains(" - ")));
    }
}
