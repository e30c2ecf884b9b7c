//! TOML documents: scheduler configuration and simulation scenarios.
//!
//! Scheduler configuration (every key optional, unknown keys rejected):
//!
//! ```toml
//! overload_threshold = 0.8
//! latency_threshold_ms = 100.0
//! history_capacity = 50
//! [weights]
//! resource = 0.2
//! load = 0.2
//! performance = 0.1
//! balance = 0.5
//! [cache]
//! enabled = true
//! cpu_granularity = 0.01
//! mem_granularity_mib = 1.0
//! ```
//!
//! Scenario:
//!
//! ```toml
//! seed = 42
//! warmup_ms = 30000
//! measurement_ms = 300000
//! scheduler_config = "scheduler.toml"   # optional, relative to this file
//!
//! [model]
//! manifest = "model.jsonl"              # optional, bundled MobileNetV2 otherwise
//! strategy = "greedy"                   # or "capability"
//! partitions = 2
//!
//! [workload]
//! arrival = "closed_loop"               # or "fixed_rate", "poisson"
//! concurrency = 4
//!
//! [[nodes]]
//! id = "edge-1"
//! profile = "high"                      # or cpu = 0.8 and memory_mib = 768
//! latency_ms = 2.0
//!
//! [[events]]
//! at_ms = 60000
//! leave = "edge-1"                      # or join = { id = "edge-2", profile = "low" }
//! ```
//!
//! Optional tables `[exec_model]`, `[network]` and `[scheduler]` override the
//! simulator defaults; `[scheduler]` and `scheduler_config` are exclusive.

use std::path::Path;

use edgepart_core::partitioner::CapabilityWeights;
use edgepart_core::scheduler::SchedulerConfig;
use edgepart_core::sim::{
    Arrival, ExecModel, MembershipAction, MembershipEvent, NetworkModel, NodeProfile, NodeSpec, Scenario, Strategy,
    Workload,
};
use serde::Deserialize;

use crate::error::{Error, Result, read};
use crate::manifest_io::{mobilenet_v2, read_manifest};

fn syntax(origin: &str, text: &str, e: &toml::de::Error) -> Error {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(0);
    Error::Syntax {
        origin: origin.to_string(),
        line,
        message: e.message().to_string(),
    }
}

pub fn parse_scheduler_config(text: &str, origin: &str) -> Result<SchedulerConfig> {
    let cfg: SchedulerConfig = toml::from_str(text).map_err(|e| syntax(origin, text, &e))?;
    cfg.validate().map_err(|e| Error::invalid(origin, e))?;
    Ok(cfg)
}

pub fn read_scheduler_config(path: &Path) -> Result<SchedulerConfig> {
    parse_scheduler_config(&read(path)?, &path.display().to_string())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    seed: Option<u64>,
    #[serde(default)]
    warmup_ms: f64,
    measurement_ms: f64,
    scheduler_config: Option<String>,
    scheduling_ms_per_eval: Option<f64>,
    queue_timeout_ms: Option<f64>,
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    workload: WorkloadSection,
    #[serde(default)]
    nodes: Vec<NodeEntry>,
    #[serde(default)]
    events: Vec<EventEntry>,
    #[serde(default)]
    exec_model: ExecModel,
    #[serde(default)]
    network: NetworkModel,
    scheduler: Option<SchedulerConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ModelSection {
    manifest: Option<String>,
    strategy: String,
    partitions: usize,
    rebalance_iters: usize,
    w_cpu: f64,
    w_mem: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            manifest: None,
            strategy: "greedy".into(),
            partitions: 1,
            rebalance_iters: 100,
            w_cpu: 0.5,
            w_mem: 0.5,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct WorkloadSection {
    requests: Option<u64>,
    batch_size: u32,
    arrival: String,
    concurrency: Option<u32>,
    rate_rps: Option<f64>,
    cpu_req: f64,
    mem_req_mib: f64,
    priority: i32,
    input_bytes: u64,
    activation_bytes: u64,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        let w = Workload::default();
        WorkloadSection {
            requests: w.requests,
            batch_size: w.batch_size,
            arrival: "closed_loop".into(),
            concurrency: None,
            rate_rps: None,
            cpu_req: w.cpu_req,
            mem_req_mib: w.mem_req_mib,
            priority: w.priority,
            input_bytes: w.input_bytes,
            activation_bytes: w.activation_bytes,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    id: String,
    profile: Option<String>,
    cpu: Option<f64>,
    memory_mib: Option<f64>,
    #[serde(default = "default_latency")]
    latency_ms: f64,
    #[serde(default)]
    latency_jitter_ms: f64,
}

fn default_latency() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventEntry {
    at_ms: f64,
    join: Option<NodeEntry>,
    leave: Option<String>,
}

fn bad(origin: &str, msg: String) -> Error {
    Error::invalid(origin, edgepart_core::Error::InvalidScenario(msg))
}

impl NodeEntry {
    fn into_spec(self, origin: &str) -> Result<NodeSpec> {
        let profile = match (self.profile.as_deref(), self.cpu, self.memory_mib) {
            (Some(name), None, None) => NodeProfile::named(name).ok_or_else(|| {
                bad(
                    origin,
                    format!("node {}: unknown profile `{name}` (high, medium or low)", self.id),
                )
            })?,
            (None, Some(cpu), Some(mem)) => NodeProfile::custom(cpu, mem).map_err(|e| Error::invalid(origin, e))?,
            _ => {
                return Err(bad(
                    origin,
                    format!("node {}: give either `profile` or both `cpu` and `memory_mib`", self.id),
                ));
            }
        };
        Ok(NodeSpec {
            id: self.id,
            profile,
            latency_ms: self.latency_ms,
            latency_jitter_ms: self.latency_jitter_ms,
        })
    }
}

/// Parses a scenario. Relative paths inside it resolve against `base_dir`.
pub fn parse_scenario(text: &str, origin: &str, base_dir: &Path) -> Result<Scenario> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| syntax(origin, text, &e))?;
    let model = match &file.model.manifest {
        Some(p) => read_manifest(&base_dir.join(p))?,
        None => mobilenet_v2(),
    };
    let strategy = match file.model.strategy.as_str() {
        "greedy" => Strategy::Greedy {
            partitions: file.model.partitions,
            rebalance_iters: file.model.rebalance_iters,
        },
        "capability" => Strategy::Capability {
            weights: CapabilityWeights::new(file.model.w_cpu, file.model.w_mem)
                .map_err(|e| Error::invalid(origin, e))?,
        },
        s => return Err(bad(origin, format!("unknown strategy `{s}` (greedy or capability)"))),
    };
    let w = file.workload;
    let arrival = match (w.arrival.as_str(), w.concurrency, w.rate_rps) {
        ("closed_loop", c, None) => Arrival::ClosedLoop {
            concurrency: c.unwrap_or(1),
        },
        ("fixed_rate", None, Some(rate_rps)) => Arrival::FixedRate { rate_rps },
        ("poisson", None, Some(rate_rps)) => Arrival::Poisson { rate_rps },
        (a, _, _) => {
            return Err(bad(
                origin,
                format!("arrival `{a}`: closed_loop takes `concurrency`, fixed_rate and poisson take `rate_rps`"),
            ));
        }
    };
    let scheduler = match (file.scheduler, &file.scheduler_config) {
        (Some(_), Some(_)) => {
            return Err(bad(
                origin,
                "use either [scheduler] or scheduler_config, not both".into(),
            ));
        }
        (Some(cfg), None) => cfg,
        (None, Some(p)) => read_scheduler_config(&base_dir.join(p))?,
        (None, None) => SchedulerConfig::default(),
    };
    let nodes = file
        .nodes
        .into_iter()
        .map(|n| n.into_spec(origin))
        .collect::<Result<Vec<_>>>()?;
    let mut events = Vec::with_capacity(file.events.len());
    for e in file.events {
        let action = match (e.join, e.leave) {
            (Some(n), None) => MembershipAction::Join(n.into_spec(origin)?),
            (None, Some(id)) => MembershipAction::Leave(id),
            _ => {
                return Err(bad(
                    origin,
                    format!("event at {} ms needs exactly one of join or leave", e.at_ms),
                ));
            }
        };
        events.push(MembershipEvent { at_ms: e.at_ms, action });
    }
    let mut scenario = Scenario::new(model, nodes);
    scenario.seed = file.seed.unwrap_or(crate::DEFAULT_SEED);
    scenario.warmup_ms = file.warmup_ms;
    scenario.measurement_ms = file.measurement_ms;
    scenario.strategy = strategy;
    scenario.events = events;
    scenario.workload = Workload {
        requests: w.requests,
        batch_size: w.batch_size,
        arrival,
        cpu_req: w.cpu_req,
        mem_req_mib: w.mem_req_mib,
        priority: w.priority,
        input_bytes: w.input_bytes,
        activation_bytes: w.activation_bytes,
    };
    scenario.exec_model = file.exec_model;
    scenario.network = file.network;
    scenario.scheduler = scheduler;
    if let Some(v) = file.scheduling_ms_per_eval {
        scenario.scheduling_ms_per_eval = v;
    }
    if let Some(v) = file.queue_timeout_ms {
        scenario.queue_timeout_ms = v;
    }
    check_membership(&scenario).map_err(|m| bad(origin, m))?;
    scenario.validate().map_err(|e| Error::invalid(origin, e))?;
    Ok(scenario)
}

/// Joins must use fresh ids and leaves must name a live node, replaying the
/// events in time order.
fn check_membership(s: &Scenario) -> std::result::Result<(), String> {
    let mut alive: Vec<&str> = s.nodes.iter().map(|n| n.id.as_str()).collect();
    let mut events: Vec<&MembershipEvent> = s.events.iter().collect();
    events.sort_by(|a, b| a.at_ms.total_cmp(&b.at_ms));
    for e in events {
        match &e.action {
            MembershipAction::Join(n) if alive.contains(&n.id.as_str()) => {
                return Err(format!("join at {} ms: node {} is already present", e.at_ms, n.id));
            }
            MembershipAction::Join(n) => alive.push(&n.id),
            MembershipAction::Leave(id) => match alive.iter().position(|a| a == id) {
                Some(p) => {
                    alive.remove(p);
                }
                None => return Err(format!("leave at {} ms: node {id} is not present", e.at_ms)),
            },
        }
    }
    Ok(())
}

pub fn read_scenario(path: &Path) -> Result<Scenario> {
    let text = read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_scenario(&text, &path.display().to_string(), base)
}
