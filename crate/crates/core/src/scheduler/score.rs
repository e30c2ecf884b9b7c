use alloc::format;

use serde::{Deserialize, Serialize};

use super::{NodeState, ScoreWeights, TaskRequest};
use crate::{Error, Result};

/// Unclamped resource fit: the mean of `avail / req` over the dimensions the
/// task actually requests.
pub fn resource_score_raw(node: &NodeState, task: &TaskRequest) -> Result<f64> {
    task.validate()?;
    let mut sum = 0.0;
    let mut used = 0u32;
    if task.cpu_req > 0.0 {
        sum += node.cpu_avail.max(0.0) / task.cpu_req;
        used += 1;
    }
    if task.mem_req > 0.0 {
        sum += node.mem_avail.max(0.0) / task.mem_req;
        used += 1;
    }
    Ok(sum / used as f64)
}

/// Resource fit clamped to [0, 1].
pub fn resource_score(node: &NodeState, task: &TaskRequest) -> Result<f64> {
    Ok(resource_score_raw(node, task)?.clamp(0.0, 1.0))
}

pub fn load_score(node: &NodeState) -> f64 {
    (1.0 - node.current_load).clamp(0.0, 1.0)
}

/// `1 / (1 + avg)` where `avg` is the mean min-max normalized execution time
/// over the node's history window. A node without history scores 1.
pub fn performance_score(node: &NodeState) -> f64 {
    1.0 / (1.0 + node.avg_normalized_exec_time())
}

pub fn balance_score(node: &NodeState) -> f64 {
    1.0 / (1.0 + 2.0 * node.task_count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub resource_raw: f64,
    pub resource: f64,
    pub load: f64,
    pub performance: f64,
    pub balance: f64,
    pub total: f64,
}

pub fn score_breakdown(node: &NodeState, task: &TaskRequest, weights: &ScoreWeights) -> Result<ScoreBreakdown> {
    let resource_raw = resource_score_raw(node, task)?;
    let resource = resource_raw.clamp(0.0, 1.0);
    let load = load_score(node);
    let performance = performance_score(node);
    let balance = balance_score(node);
    let total = weights.resource * resource
        + weights.load * load
        + weights.performance * performance
        + weights.balance * balance;
    Ok(ScoreBreakdown {
        resource_raw,
        resource,
        load,
        performance,
        balance,
        total,
    })
}

pub fn total_score(node: &NodeState, task: &TaskRequest, weights: &ScoreWeights) -> Result<f64> {
    score_breakdown(node, task, weights).map(|b| b.total)
}

impl TaskRequest {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.cpu_req) || !ok(self.mem_req) {
            return Err(Error::InvalidTask(format!(
                "{}: requirements must be finite and >= 0",
                self.task_id
            )));
        }
        if self.cpu_req == 0.0 && self.mem_req == 0.0 {
            return Err(Error::InvalidTask(format!(
                "{}: requests neither cpu nor memory",
                self.task_id
            )));
        }
        Ok(())
    }
}
