use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::profile::{ExecModel, NodeProfile};
use crate::manifest::ModelManifest;
use crate::partitioner::CapabilityWeights;
use crate::scheduler::SchedulerConfig;
use crate::{Error, Result};

/// A node as described by a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub profile: NodeProfile,
    /// Fixed one-way network latency to the node.
    pub latency_ms: f64,
    /// Half-width of the uniform jitter added to `latency_ms` per transfer.
    pub latency_jitter_ms: f64,
}

impl NodeSpec {
    pub fn new(id: impl Into<String>, profile: NodeProfile, latency_ms: f64) -> Self {
        NodeSpec {
            id: id.into(),
            profile,
            latency_ms,
            latency_jitter_ms: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::InvalidScenario(String::from("node id must not be empty")));
        }
        NodeProfile::custom(self.profile.cpu, self.profile.memory_mib)
            .map_err(|e| Error::InvalidScenario(format!("node {}: {e}", self.id)))?;
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.latency_ms) || !ok(self.latency_jitter_ms) {
            return Err(Error::InvalidScenario(format!(
                "node {}: latency and jitter must be finite and >= 0",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MembershipAction {
    Join(NodeSpec),
    Leave(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipEvent {
    pub at_ms: f64,
    pub action: MembershipAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arrival {
    /// Keeps `concurrency` requests outstanding; a completion admits the next.
    ClosedLoop { concurrency: u32 },
    /// Evenly spaced arrivals.
    FixedRate { rate_rps: f64 },
    /// Exponential inter-arrival times from a seeded stream.
    Poisson { rate_rps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    /// Cap on submitted requests; `None` runs until the horizon.
    pub requests: Option<u64>,
    pub batch_size: u32,
    pub arrival: Arrival,
    /// Reservation per stage task, in cores.
    pub cpu_req: f64,
    /// Reservation per stage task, also the working set seen by the
    /// memory-pressure rule.
    pub mem_req_mib: f64,
    pub priority: i32,
    /// Input size per batch item, sent to the first stage.
    pub input_bytes: u64,
    /// Activation size per batch item between stages.
    pub activation_bytes: u64,
}

impl Default for Workload {
    fn default() -> Self {
        Workload {
            requests: None,
            batch_size: 1,
            arrival: Arrival::ClosedLoop { concurrency: 1 },
            cpu_req: 0.1,
            mem_req_mib: 64.0,
            priority: 0,
            // 224x224x3 f32 image
            input_bytes: 602_112,
            // mean inter-block activation of the bundled model, f32
            activation_bytes: 200_704,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Equal-cost greedy split into a fixed number of partitions, then
    /// boundary refinement.
    Greedy { partitions: usize, rebalance_iters: usize },
    /// One partition per live node sized by capability share, recomputed on
    /// every membership change. Each partition's node is used as a placement
    /// hint.
    Capability { weights: CapabilityWeights },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkModel {
    pub bandwidth_bytes_per_ms: f64,
}

impl Default for NetworkModel {
    /// 1 Gbit/s.
    fn default() -> Self {
        NetworkModel {
            bandwidth_bytes_per_ms: 125_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub warmup_ms: f64,
    pub measurement_ms: f64,
    pub model: ModelManifest,
    pub strategy: Strategy,
    pub nodes: Vec<NodeSpec>,
    pub events: Vec<MembershipEvent>,
    pub workload: Workload,
    pub exec_model: ExecModel,
    pub network: NetworkModel,
    pub scheduler: SchedulerConfig,
    /// Modeled cost of one score evaluation, for the reported scheduling
    /// overhead.
    pub scheduling_ms_per_eval: f64,
    /// Requests queued longer than this count as unstable.
    pub queue_timeout_ms: f64,
}

impl Scenario {
    /// A scenario with default workload, models and scheduler settings.
    pub fn new(model: ModelManifest, nodes: Vec<NodeSpec>) -> Self {
        Scenario {
            seed: 42,
            warmup_ms: 0.0,
            measurement_ms: 10_000.0,
            model,
            strategy: Strategy::Greedy {
                partitions: 1,
                rebalance_iters: 100,
            },
            nodes,
            events: Vec::new(),
            workload: Workload::default(),
            exec_model: ExecModel::default(),
            network: NetworkModel::default(),
            scheduler: SchedulerConfig::default(),
            scheduling_ms_per_eval: 0.05,
            queue_timeout_ms: 10_000.0,
        }
    }

    pub fn horizon_ms(&self) -> f64 {
        self.warmup_ms + self.measurement_ms
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.warmup_ms) {
            return bad(format!("warmup_ms must be finite and >= 0, got {}", self.warmup_ms));
        }
        if !(self.measurement_ms.is_finite() && self.measurement_ms > 0.0) {
            return bad(format!("measurement_ms must be > 0, got {}", self.measurement_ms));
        }
        // microsecond clock in u64 with plenty of headroom
        if self.horizon_ms() > 1e12 {
            return bad(String::from("horizon exceeds 1e12 ms"));
        }
        match self.strategy {
            Strategy::Greedy { partitions, .. } => {
                if partitions == 0 || partitions > self.model.len() {
                    return bad(format!(
                        "partitions must lie in 1..={}, got {partitions}",
                        self.model.len()
                    ));
                }
            }
            Strategy::Capability { weights } => {
                weights.validate().map_err(|e| Error::InvalidScenario(format!("{e}")))?;
            }
        }
        let mut ids: Vec<&str> = Vec::new();
        for n in &self.nodes {
            n.validate()?;
            if ids.contains(&n.id.as_str()) {
                return bad(format!("duplicate node id {}", n.id));
            }
            ids.push(&n.id);
        }
        for e in &self.events {
            if !ok(e.at_ms) {
                return bad(format!("event time must be finite and >= 0, got {}", e.at_ms));
            }
            if let MembershipAction::Join(n) = &e.action {
                n.validate()?;
            }
        }
        let w = &self.workload;
        if w.batch_size == 0 {
            return bad(String::from("batch_size must be >= 1"));
        }
        if !(ok(w.cpu_req) && ok(w.mem_req_mib)) || (w.cpu_req == 0.0 && w.mem_req_mib == 0.0) {
            return bad(String::from(
                "cpu_req and mem_req_mib must be finite, >= 0 and not both zero",
            ));
        }
        match w.arrival {
            Arrival::ClosedLoop { concurrency: 0 } => {
                return bad(String::from("closed-loop concurrency must be >= 1"));
            }
            Arrival::FixedRate { rate_rps } | Arrival::Poisson { rate_rps }
                if !(rate_rps.is_finite() && rate_rps > 0.0) =>
            {
                return bad(format!("arrival rate must be > 0, got {rate_rps}"));
            }
            _ => {}
        }
        self.exec_model
            .validate()
            .map_err(|e| Error::InvalidScenario(format!("{e}")))?;
        if !(self.network.bandwidth_bytes_per_ms.is_finite() && self.network.bandwidth_bytes_per_ms > 0.0) {
            return bad(String::from("bandwidth must be > 0"));
        }
        self.scheduler
            .validate()
            .map_err(|e| Error::InvalidScenario(format!("{e}")))?;
        if !ok(self.scheduling_ms_per_eval) || !ok(self.queue_timeout_ms) {
            return bad(String::from(
                "scheduling_ms_per_eval and queue_timeout_ms must be finite and >= 0",
            ));
        }
        Ok(())
    }
}
