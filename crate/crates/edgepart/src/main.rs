use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use edgepart::config_io::{read_scenario, read_scheduler_config};
use edgepart::error::{Error, Result};
use edgepart::manifest_io::{mobilenet_v2, read_manifest, write_manifest};
use edgepart::report_io::{format_comparison, read_report, reports_to_csv, to_canonical_json};
use edgepart::timing::timed_select;
use edgepart_core::cost::cost_profile;
use edgepart_core::metrics::compare;
use edgepart_core::partitioner::{greedy_partition, rebalance};
use edgepart_core::scheduler::{NodeState, Placement, Scheduler, SchedulerMetrics, TaskRecord, TaskRequest};
use edgepart_core::sim::{Scenario, exec_time, run_scenario};
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use serde::Serialize;

/// Layer-wise model partitioning and edge-cluster scheduling.
///
/// Exit status: 0 on success, 1 on an internal error, 2 on bad usage or input.
#[derive(Debug, Parser)]
#[command(name = "edgepart", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a model into contiguous partitions and export one manifest per
    /// partition plus the plan.
    Partition {
        /// Manifest to split; the bundled MobileNetV2 when omitted.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        partitions: u64,
        /// Boundary-refinement iterations; 0 keeps the greedy split.
        #[arg(long, default_value_t = 100)]
        rebalance_iters: usize,
        /// Output directory, created if missing. Receives
        /// `<model>.part<i>.jsonl` and `<model>.plan.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a simulation scenario and write its metrics report as JSON.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Replaces the scenario's scheduler settings.
        #[arg(long)]
        scheduler_config: Option<PathBuf>,
        /// Overrides the scenario seed (default 42 when neither is given).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Place the scenario's tasks one after another on its initial nodes
    /// and write the placements and scheduler metrics.
    Schedule {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        scheduler_config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of tasks; the scenario's request cap, or 1000.
        #[arg(long)]
        tasks: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two reports and print the per-metric deltas.
    Report {
        candidate: PathBuf,
        baseline: PathBuf,
        /// Also write both reports as CSV rows.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("edgepart: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Partition {
            manifest,
            partitions,
            rebalance_iters,
            out,
        } => cmd_partition(manifest.as_deref(), partitions as usize, rebalance_iters, &out),
        Command::Simulate {
            scenario,
            scheduler_config,
            seed,
            out,
        } => {
            let s = load_scenario(&scenario, scheduler_config.as_deref(), seed)?;
            cmd_simulate(&s, &out)
        }
        Command::Schedule {
            scenario,
            scheduler_config,
            seed,
            tasks,
            out,
        } => {
            let s = load_scenario(&scenario, scheduler_config.as_deref(), seed)?;
            cmd_schedule(&s, tasks, &out)
        }
        Command::Report {
            candidate,
            baseline,
            out,
        } => cmd_report(&candidate, &baseline, out.as_deref()),
    }
}

fn load_scenario(path: &Path, scheduler_config: Option<&Path>, seed: Option<u64>) -> Result<Scenario> {
    let mut s = read_scenario(path)?;
    if let Some(p) = scheduler_config {
        s.scheduler = read_scheduler_config(p)?;
    }
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Write {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn cmd_partition(manifest: Option<&Path>, k: usize, iters: usize, out: &Path) -> Result<()> {
    let model = match manifest {
        Some(p) => read_manifest(p)?,
        None => mobilenet_v2(),
    };
    let origin = manifest.map_or_else(|| "mobilenet_v2".to_string(), |p| p.display().to_string());
    let profile = cost_profile(&model);
    let plan = greedy_partition(&profile, k)
        .and_then(|g| rebalance(&g, &profile, iters))
        .map_err(|e| Error::Invalid { origin, source: e })?;
    create_dir(out)?;
    for (i, range) in plan.boundaries.iter().enumerate() {
        let part = model.sub_manifest(*range)?;
        write_manifest(&out.join(format!("{}.part{i}.jsonl", model.name())), &part)?;
    }
    write_file(
        &out.join(format!("{}.plan.json", model.name())),
        &to_canonical_json(&plan)?,
    )?;
    println!(
        "model {} ({} layers, cost {})",
        model.name(),
        model.len(),
        profile.total()
    );
    println!("sizes {:?}", plan.sizes());
    println!("costs {:?}", plan.per_partition_cost);
    println!("L {:.6}", plan.balance);
    Ok(())
}

fn cmd_simulate(s: &Scenario, out: &Path) -> Result<()> {
    let output = run_scenario(s)?;
    let r = &output.report;
    write_file(out, &to_canonical_json(r)?)?;
    let show = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
    println!(
        "seed {}: {} measured requests, {:.3} req/s, latency mean {} ms p95 {} ms",
        r.seed,
        r.counts.measured,
        r.throughput_rps,
        show(r.inference_latency_ms.mean),
        show(r.inference_latency_ms.p95)
    );
    println!(
        "rescheduled {}, stability {}, report written to {}",
        r.counts.rescheduled,
        r.stability_score.map_or_else(|| "-".to_string(), |x| format!("{x:.4}")),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct PlacementRow {
    task_id: String,
    stage: usize,
    placement: Option<Placement>,
    exec_ms: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ScheduleOutput {
    seed: u64,
    placements: Vec<PlacementRow>,
    unplaced: u64,
    metrics: SchedulerMetrics,
}

/// Each task is placed on the scenario's initial nodes and completed with its
/// modeled execution time before the next one arrives, so history and the
/// cache evolve as they would under a sequential workload. Wall-clock
/// selection time goes to standard output only, keeping the file
/// reproducible.
fn cmd_schedule(s: &Scenario, tasks: Option<u64>, out: &Path) -> Result<()> {
    s.validate()?;
    let mut sched = Scheduler::new(s.scheduler)?;
    for n in &s.nodes {
        sched.add_node(NodeState::new(
            n.id.clone(),
            n.profile.cpu,
            n.profile.memory_mib,
            n.latency_ms,
        ))?;
    }
    let profile = cost_profile(&s.model);
    let stages = match s.strategy {
        edgepart_core::sim::Strategy::Greedy {
            partitions,
            rebalance_iters,
        } => rebalance(&greedy_partition(&profile, partitions)?, &profile, rebalance_iters)?,
        edgepart_core::sim::Strategy::Capability { .. } => greedy_partition(&profile, 1)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let count = tasks.or(s.workload.requests).unwrap_or(1000);
    let mut placements = Vec::new();
    let mut records = Vec::new();
    let mut unplaced = 0;
    let mut wall = std::time::Duration::ZERO;
    for i in 0..count {
        let stage = i as usize % stages.num_partitions();
        let task = TaskRequest {
            task_id: format!("t{i}"),
            cpu_req: s.workload.cpu_req,
            mem_req: s.workload.mem_req_mib,
            priority: s.workload.priority,
        };
        let (placement, elapsed) = timed_select(&mut sched, &task, None)?;
        wall += elapsed;
        let mut exec_ms = None;
        if let Some(p) = &placement {
            sched.assign(&task, &p.node_id)?;
            let spec = s
                .nodes
                .iter()
                .find(|n| n.id == p.node_id)
                .expect("scheduler only knows scenario nodes");
            let cost = stages.per_partition_cost[stage] as f64 * f64::from(s.workload.batch_size);
            let t = exec_time(cost, s.workload.mem_req_mib, &spec.profile, &s.exec_model, &mut rng)?;
            let mut rec = TaskRecord::new(task.task_id.clone(), p.node_id.clone(), 0.0, 0.0, t)?;
            sched.complete_task(&mut rec)?;
            records.push(rec);
            exec_ms = Some(t);
        } else {
            unplaced += 1;
        }
        placements.push(PlacementRow {
            task_id: task.task_id,
            stage,
            placement,
            exec_ms,
        });
    }
    let mut metrics = sched.metrics(&records);
    metrics.mean_select_overhead_ms = None;
    let doc = ScheduleOutput {
        seed: s.seed,
        placements,
        unplaced,
        metrics,
    };
    write_file(out, &to_canonical_json(&doc)?)?;
    for n in &doc.metrics.per_node {
        println!("{:<12} {:>6} tasks", n.node_id, n.completed);
    }
    let mean_us = if count > 0 {
        wall.as_secs_f64() * 1e6 / count as f64
    } else {
        0.0
    };
    println!(
        "{count} tasks, {unplaced} unplaced, {} score evaluations, mean select wall time {mean_us:.2} us",
        doc.metrics.score_evaluations
    );
    Ok(())
}

fn cmd_report(candidate: &Path, baseline: &Path, out: Option<&Path>) -> Result<()> {
    let c = read_report(candidate)?;
    let b = read_report(baseline)?;
    let table = compare(&c, &b).map_err(|e| Error::Invalid {
        origin: candidate.display().to_string(),
        source: e,
    })?;
    print!("{}", format_comparison(&table));
    if let Some(p) = out {
        write_file(p, &reports_to_csv(&[("candidate", &c), ("baseline", &b)]))?;
    }
    Ok(())
}
