//! Weighted-score node selection.
//!
//! [`select_node`] is the stateless selection pass: skip nodes that are
//! overloaded, too far away or short of resources, score the rest and keep
//! the first node with the strictly highest score. [`Scheduler`] wraps it
//! with the node registry, in-flight bookkeeping, execution history and the
//! placement cache. All mutation goes through `&mut Scheduler`, so a
//! node's task count and history always change together.

mod cache;
mod score;

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use cache::{CacheConfig, CacheKey, PerformanceCache, cache_lookup};
pub use score::{
    ScoreBreakdown, balance_score, load_score, performance_score, resource_score, resource_score_raw, score_breakdown,
    total_score,
};

use crate::{Error, Result};

/// Scheduler view of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub node_id: String,
    /// Unreserved CPU, cores.
    pub cpu_avail: f64,
    /// Unreserved memory, MiB.
    pub mem_avail: f64,
    /// Fraction in [0, 1].
    pub current_load: f64,
    /// Milliseconds.
    pub network_latency: f64,
    /// In-flight tasks.
    pub task_count: u32,
    /// Recent execution times in ms, oldest first.
    pub exec_history: VecDeque<f64>,
}

impl NodeState {
    pub fn new(node_id: impl Into<String>, cpu: f64, memory_mib: f64, network_latency: f64) -> Self {
        NodeState {
            node_id: node_id.into(),
            cpu_avail: cpu,
            mem_avail: memory_mib,
            current_load: 0.0,
            network_latency,
            task_count: 0,
            exec_history: VecDeque::new(),
        }
    }

    /// Mean of the history after min-max normalization over the window; 0 for
    /// an empty or constant window.
    pub fn avg_normalized_exec_time(&self) -> f64 {
        let (lo, hi) = min_max(self.exec_history.iter().copied());
        if self.exec_history.is_empty() || hi <= lo {
            return 0.0;
        }
        let span = hi - lo;
        self.exec_history.iter().map(|e| (e - lo) / span).sum::<f64>() / self.exec_history.len() as f64
    }

    pub fn has_sufficient_resources(&self, task: &TaskRequest) -> bool {
        self.cpu_avail >= task.cpu_req && self.mem_avail >= task.mem_req
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRequest {
    pub task_id: String,
    /// Cores.
    pub cpu_req: f64,
    /// MiB.
    pub mem_req: f64,
    /// Higher is more urgent. Carried through but not used in scoring.
    pub priority: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreWeights {
    pub resource: f64,
    pub load: f64,
    pub performance: f64,
    pub balance: f64,
}

impl ScoreWeights {
    pub fn new(resource: f64, load: f64, performance: f64, balance: f64) -> Result<Self> {
        let w = ScoreWeights {
            resource,
            load,
            performance,
            balance,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.resource, self.load, self.performance, self.balance];
        if parts.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidWeights(String::from(
                "score weights must be finite and >= 0",
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidWeights(format!("score weights sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            resource: 0.2,
            load: 0.2,
            performance: 0.1,
            balance: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    /// Nodes with load strictly above this are skipped.
    pub overload_threshold: f64,
    /// Nodes with latency strictly above this (ms) are skipped.
    pub latency_threshold_ms: f64,
    pub history_capacity: usize,
    pub weights: ScoreWeights,
    pub cache: CacheConfig,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            overload_threshold: 0.8,
            latency_threshold_ms: 100.0,
            history_capacity: 50,
            weights: ScoreWeights::default(),
            cache: CacheConfig::default(),
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.overload_threshold > 0.0 && self.latency_threshold_ms > 0.0) {
            return Err(Error::InvalidConfig(String::from("thresholds must be > 0")));
        }
        if self.history_capacity == 0 {
            return Err(Error::InvalidConfig(String::from("history_capacity must be >= 1")));
        }
        if !(self.cache.cpu_granularity > 0.0 && self.cache.mem_granularity_mib > 0.0) {
            return Err(Error::InvalidConfig(String::from("cache granularity must be > 0")));
        }
        self.weights.validate()
    }
}

/// Completion record of one task. Times are milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub node_id: String,
    pub submit_time: f64,
    pub start_time: f64,
    pub end_time: f64,
    pub exec_time: f64,
    /// Filled in by [`Scheduler::complete_task`].
    pub normalized_perf: f64,
}

impl TaskRecord {
    pub fn new(
        task_id: impl Into<String>,
        node_id: impl Into<String>,
        submit_time: f64,
        start_time: f64,
        end_time: f64,
    ) -> Result<Self> {
        let task_id = task_id.into();
        if !(submit_time <= start_time && start_time <= end_time) {
            return Err(Error::InvalidTask(format!(
                "{task_id}: times must satisfy submit <= start <= end"
            )));
        }
        Ok(TaskRecord {
            task_id,
            node_id: node_id.into(),
            submit_time,
            start_time,
            end_time,
            exec_time: end_time - start_time,
            normalized_perf: 0.0,
        })
    }
}

/// Why a node was passed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Eligibility {
    Eligible,
    Overloaded,
    HighLatency,
    InsufficientResources,
}

pub fn eligibility(node: &NodeState, task: &TaskRequest, config: &SchedulerConfig) -> Eligibility {
    if node.current_load > config.overload_threshold {
        Eligibility::Overloaded
    } else if node.network_latency > config.latency_threshold_ms {
        Eligibility::HighLatency
    } else if !node.has_sufficient_resources(task) {
        Eligibility::InsufficientResources
    } else {
        Eligibility::Eligible
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Position of the chosen node in the input slice.
    pub index: Option<usize>,
    pub score: Option<f64>,
    /// Number of nodes whose total score was computed.
    pub evaluations: usize,
}

/// Picks the eligible node with the strictly highest total score, keeping
/// the earlier node on ties. Returns no node when none is eligible.
pub fn select_node(task: &TaskRequest, nodes: &[NodeState], config: &SchedulerConfig) -> Result<Selection> {
    task.validate()?;
    let mut best: Option<(usize, f64)> = None;
    let mut evaluations = 0;
    for (i, node) in nodes.iter().enumerate() {
        if eligibility(node, task, config) != Eligibility::Eligible {
            continue;
        }
        let score = total_score(node, task, &config.weights)?;
        evaluations += 1;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    Ok(Selection {
        index: best.map(|(i, _)| i),
        score: best.map(|(_, s)| s),
        evaluations,
    })
}

/// Where a placement decision came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlacementSource {
    /// Caller-supplied preferred node, e.g. from a partition plan.
    Preferred,
    Cache,
    Scan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub node_id: String,
    pub source: PlacementSource,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionCounters {
    pub selections: u64,
    pub placed: u64,
    pub score_evaluations: u64,
    pub cache_hits: u64,
    pub cache_rejections: u64,
    pub preferred_hits: u64,
    /// Accumulated wall time of selections, as reported by the caller.
    pub overhead_ns: u128,
    pub timed_selections: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct InFlight {
    node_id: String,
    cpu_req: f64,
    mem_req: f64,
    key: CacheKey,
}

/// Node registry plus the selection state that has to stay consistent with
/// it.
#[derive(Debug, Clone)]
pub struct Scheduler {
    config: SchedulerConfig,
    nodes: Vec<NodeState>,
    in_flight: BTreeMap<String, InFlight>,
    /// Availability each node had when it joined; reservations are
    /// recomputed from this so repeated add/subtract cannot drift.
    base: BTreeMap<String, (f64, f64)>,
    cache: PerformanceCache,
    counters: SelectionCounters,
}

impl Scheduler {
    pub fn new(config: SchedulerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Scheduler {
            cache: PerformanceCache::new(config.cache, config.history_capacity),
            config,
            nodes: Vec::new(),
            in_flight: BTreeMap::new(),
            base: BTreeMap::new(),
            counters: SelectionCounters::default(),
        })
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn node(&self, node_id: &str) -> Option<&NodeState> {
        self.nodes.iter().find(|n| n.node_id == node_id)
    }

    fn node_mut(&mut self, node_id: &str) -> Result<&mut NodeState> {
        self.nodes
            .iter_mut()
            .find(|n| n.node_id == node_id)
            .ok_or_else(|| Error::UnknownNode(String::from(node_id)))
    }

    pub fn cache(&self) -> &PerformanceCache {
        &self.cache
    }

    pub fn counters(&self) -> &SelectionCounters {
        &self.counters
    }

    /// Adds wall time measured around a selection by the caller.
    pub fn record_overhead(&mut self, nanos: u128) {
        self.counters.overhead_ns += nanos;
        self.counters.timed_selections += 1;
    }

    pub fn add_node(&mut self, node: NodeState) -> Result<()> {
        if self.node(&node.node_id).is_some() {
            return Err(Error::DuplicateNode(node.node_id));
        }
        self.base.insert(node.node_id.clone(), (node.cpu_avail, node.mem_avail));
        self.nodes.push(node);
        Ok(())
    }

    /// Removes a node, its cache hints and its in-flight bookkeeping.
    /// Returns the node and the ids of the tasks it was running, in id order.
    pub fn remove_node(&mut self, node_id: &str) -> Result<(NodeState, Vec<String>)> {
        let pos = self
            .nodes
            .iter()
            .position(|n| n.node_id == node_id)
            .ok_or_else(|| Error::UnknownNode(String::from(node_id)))?;
        let node = self.nodes.remove(pos);
        let orphaned: Vec<String> = self
            .in_flight
            .iter()
            .filter(|(_, f)| f.node_id == node_id)
            .map(|(id, _)| id.clone())
            .collect();
        for id in &orphaned {
            self.in_flight.remove(id);
        }
        self.base.remove(node_id);
        self.cache.forget_node(node_id);
        Ok((node, orphaned))
    }

    pub fn set_load(&mut self, node_id: &str, load: f64) -> Result<()> {
        self.node_mut(node_id)?.current_load = load.clamp(0.0, 1.0);
        Ok(())
    }

    pub fn set_latency(&mut self, node_id: &str, latency_ms: f64) -> Result<()> {
        self.node_mut(node_id)?.network_latency = latency_ms;
        Ok(())
    }

    /// Chooses a node for `task` without reserving anything.
    ///
    /// A `preferred` node is taken first and the cache hint second, each only
    /// if it passes the skip checks; otherwise every node is scored.
    pub fn select(&mut self, task: &TaskRequest, preferred: Option<&str>) -> Result<Option<Placement>> {
        task.validate()?;
        self.counters.selections += 1;
        let eligible = |id: &str| {
            self.node(id)
                .is_some_and(|n| eligibility(n, task, &self.config) == Eligibility::Eligible)
        };
        let mut placement = None;
        if let Some(id) = preferred.filter(|id| eligible(id)) {
            self.counters.preferred_hits += 1;
            placement = Some(Placement {
                node_id: String::from(id),
                source: PlacementSource::Preferred,
                evaluations: 0,
            });
        } else if let Some(id) = self.cache.lookup(task) {
            if eligible(id) {
                self.counters.cache_hits += 1;
                placement = Some(Placement {
                    node_id: String::from(id),
                    source: PlacementSource::Cache,
                    evaluations: 0,
                });
            } else {
                self.counters.cache_rejections += 1;
            }
        }
        if placement.is_none() {
            let sel = select_node(task, &self.nodes, &self.config)?;
            self.counters.score_evaluations += sel.evaluations as u64;
            placement = sel.index.map(|i| Placement {
                node_id: self.nodes[i].node_id.clone(),
                source: PlacementSource::Scan,
                evaluations: sel.evaluations,
            });
        }
        if placement.is_some() {
            self.counters.placed += 1;
        }
        Ok(placement)
    }

    /// Reserves `task`'s resources on `node_id` and counts it in flight.
    pub fn assign(&mut self, task: &TaskRequest, node_id: &str) -> Result<()> {
        if self.in_flight.contains_key(&task.task_id) {
            return Err(Error::InvalidTask(format!("{} is already in flight", task.task_id)));
        }
        let key = self.cache.key(task);
        self.node_mut(node_id)?.task_count += 1;
        self.in_flight.insert(
            task.task_id.clone(),
            InFlight {
                node_id: String::from(node_id),
                cpu_req: task.cpu_req,
                mem_req: task.mem_req,
                key,
            },
        );
        self.refresh_avail(node_id)
    }

    fn refresh_avail(&mut self, node_id: &str) -> Result<()> {
        let (cpu, mem) = *self
            .base
            .get(node_id)
            .ok_or_else(|| Error::UnknownNode(String::from(node_id)))?;
        let (cpu_used, mem_used) = self
            .in_flight
            .values()
            .filter(|f| f.node_id == node_id)
            .fold((0.0, 0.0), |(c, m), f| (c + f.cpu_req, m + f.mem_req));
        let node = self.node_mut(node_id)?;
        node.cpu_avail = cpu - cpu_used;
        node.mem_avail = mem - mem_used;
        Ok(())
    }

    /// Selects and assigns in one step.
    pub fn schedule(&mut self, task: &TaskRequest, preferred: Option<&str>) -> Result<Option<Placement>> {
        let placement = self.select(task, preferred)?;
        if let Some(p) = &placement {
            self.assign(task, &p.node_id)?;
        }
        Ok(placement)
    }

    /// Applies a completion: releases the reservation, decrements the task
    /// count, appends to the bounded history and fills in
    /// `record.normalized_perf` (min-max over the window, 0 for a single
    /// entry). Load is left to the caller's load model ([`Self::set_load`]).
    pub fn complete_task(&mut self, record: &mut TaskRecord) -> Result<()> {
        let capacity = self.config.history_capacity;
        let flight = match self.in_flight.get(&record.task_id) {
            Some(f) if f.node_id != record.node_id => {
                return Err(Error::InvalidTask(format!(
                    "{} runs on {}, not {}",
                    record.task_id, f.node_id, record.node_id
                )));
            }
            other => other.cloned(),
        };
        let node = self.node_mut(&record.node_id)?;
        if node.task_count == 0 {
            return Err(Error::TaskCountUnderflow(record.node_id.clone()));
        }
        node.task_count -= 1;
        if node.exec_history.len() == capacity {
            node.exec_history.pop_front();
        }
        node.exec_history.push_back(record.exec_time);
        let (lo, hi) = min_max(node.exec_history.iter().copied());
        record.normalized_perf = if hi > lo {
            (record.exec_time - lo) / (hi - lo)
        } else {
            0.0
        };
        if let Some(f) = flight {
            self.in_flight.remove(&record.task_id);
            self.refresh_avail(&record.node_id)?;
            self.cache.record(f.key, &record.node_id, record.exec_time);
        }
        Ok(())
    }

    /// Drops a task's reservation without touching history, for work that
    /// is abandoned rather than completed.
    pub fn cancel_task(&mut self, task_id: &str) -> Result<()> {
        let f = self
            .in_flight
            .remove(task_id)
            .ok_or_else(|| Error::UnknownTask(String::from(task_id)))?;
        let node = self.node_mut(&f.node_id)?;
        node.task_count = node.task_count.saturating_sub(1);
        self.refresh_avail(&f.node_id)
    }

    pub fn in_flight_count(&self) -> usize {
        self.in_flight.len()
    }

    pub fn metrics(&self, records: &[TaskRecord]) -> SchedulerMetrics {
        scheduler_metrics(&self.nodes, records, &self.counters)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub node_id: String,
    pub mean_exec_ms: Option<f64>,
    pub completed: u64,
    pub in_flight: u32,
    pub current_load: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerMetrics {
    pub per_node: Vec<NodeSummary>,
    /// Mean wall time per timed selection; `None` when nothing was timed.
    pub mean_select_overhead_ms: Option<f64>,
    pub selections: u64,
    pub score_evaluations: u64,
    pub cache_hits: u64,
}

pub fn scheduler_metrics(
    nodes: &[NodeState],
    records: &[TaskRecord],
    counters: &SelectionCounters,
) -> SchedulerMetrics {
    let per_node = nodes
        .iter()
        .map(|n| {
            let (count, sum) = records
                .iter()
                .filter(|r| r.node_id == n.node_id)
                .fold((0u64, 0.0), |(c, s), r| (c + 1, s + r.exec_time));
            NodeSummary {
                node_id: n.node_id.clone(),
                mean_exec_ms: (count > 0).then(|| sum / count as f64),
                completed: count,
                in_flight: n.task_count,
                current_load: n.current_load,
            }
        })
        .collect();
    SchedulerMetrics {
        per_node,
        mean_select_overhead_ms: (counters.timed_selections > 0)
            .then(|| counters.overhead_ns as f64 / counters.timed_selections as f64 / 1e6),
        selections: counters.selections,
        score_evaluations: counters.score_evaluations,
        cache_hits: counters.cache_hits,
    }
}
