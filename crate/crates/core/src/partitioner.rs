//! Contiguous model partitioning.
//!
//! Layers are walked in execution order and a partition is closed as soon as
//! its running cost meets or exceeds its target. [`greedy_partition`] uses the
//! same target for every partition; [`capability_partition`] sizes targets by
//! each node's share of the cluster's capability. [`rebalance`] then shifts
//! single boundaries while that lowers the mean absolute deviation of the
//! partition costs.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};

use crate::cost::CostProfile;
use crate::manifest::LayerRange;
use crate::{Error, Result};

/// Static capability of a node: CPU in cores (fractions allowed) and memory
/// in MiB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeCapability {
    pub node_id: String,
    pub cpu: f64,
    pub memory_mib: f64,
}

impl NodeCapability {
    pub fn new(node_id: impl Into<String>, cpu: f64, memory_mib: f64) -> Result<Self> {
        let node_id = node_id.into();
        if !(cpu.is_finite() && cpu >= 0.0 && memory_mib.is_finite() && memory_mib >= 0.0) {
            return Err(Error::InvalidNode(format!(
                "{node_id}: cpu and memory must be finite and >= 0"
            )));
        }
        if cpu == 0.0 && memory_mib == 0.0 {
            return Err(Error::InvalidNode(format!("{node_id}: cpu and memory are both zero")));
        }
        Ok(NodeCapability {
            node_id,
            cpu,
            memory_mib,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapabilityWeights {
    pub w_cpu: f64,
    pub w_mem: f64,
}

impl CapabilityWeights {
    pub fn new(w_cpu: f64, w_mem: f64) -> Result<Self> {
        let w = CapabilityWeights { w_cpu, w_mem };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.w_cpu) || !in_unit(self.w_mem) || (self.w_cpu + self.w_mem - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidWeights(format!(
                "capability weights ({}, {}) must lie in [0,1] and sum to 1",
                self.w_cpu, self.w_mem
            )));
        }
        Ok(())
    }
}

impl Default for CapabilityWeights {
    fn default() -> Self {
        CapabilityWeights { w_cpu: 0.5, w_mem: 0.5 }
    }
}

/// Cluster-wide maxima used to bring CPU and memory onto a common [0,1] scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterMaxima {
    pub cpu: f64,
    pub memory_mib: f64,
}

impl ClusterMaxima {
    pub fn of(nodes: &[NodeCapability]) -> ClusterMaxima {
        nodes.iter().fold(
            ClusterMaxima {
                cpu: 0.0,
                memory_mib: 0.0,
            },
            |acc, n| ClusterMaxima {
                cpu: acc.cpu.max(n.cpu),
                memory_mib: acc.memory_mib.max(n.memory_mib),
            },
        )
    }
}

/// `w_cpu * cpu/max_cpu + w_mem * memory/max_memory`.
pub fn capability_score(node: &NodeCapability, weights: &CapabilityWeights, norm: &ClusterMaxima) -> Result<f64> {
    if !(norm.cpu > 0.0 && norm.memory_mib > 0.0) {
        return Err(Error::ZeroNormalization);
    }
    weights.validate()?;
    Ok(weights.w_cpu * (node.cpu / norm.cpu) + weights.w_mem * (node.memory_mib / norm.memory_mib))
}

/// Each score's fraction of the sum.
pub fn allocation_ratios(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::InvalidWeights(String::from("scores must be finite and >= 0")));
    }
    let sum: f64 = scores.iter().sum();
    if sum <= 0.0 {
        return Err(Error::AllZeroScores);
    }
    Ok(scores.iter().map(|s| s / sum).collect())
}

/// A node's fraction of the total model cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeShare {
    pub node_id: String,
    pub ratio: f64,
}

/// Scores every node against the cluster maxima and turns the scores into
/// allocation ratios, keeping input order.
pub fn node_shares(nodes: &[NodeCapability], weights: &CapabilityWeights) -> Result<Vec<NodeShare>> {
    let norm = ClusterMaxima::of(nodes);
    let scores = nodes
        .iter()
        .map(|n| capability_score(n, weights, &norm))
        .collect::<Result<Vec<_>>>()?;
    let ratios = allocation_ratios(&scores)?;
    Ok(nodes
        .iter()
        .zip(ratios)
        .map(|(n, ratio)| NodeShare {
            node_id: n.node_id.clone(),
            ratio,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub boundaries: Vec<LayerRange>,
    pub per_partition_cost: Vec<u64>,
    pub assigned_node: Vec<Option<String>>,
    /// Mean absolute deviation of `per_partition_cost`.
    pub balance: f64,
}

impl PartitionPlan {
    /// Builds a plan from consecutive partition sizes.
    pub fn from_sizes(profile: &CostProfile, sizes: &[usize], assigned_node: Vec<Option<String>>) -> Result<Self> {
        if sizes.contains(&0) {
            return Err(Error::InvalidPlan(String::from("empty partition")));
        }
        if sizes.iter().sum::<usize>() != profile.len() {
            return Err(Error::InvalidPlan(format!(
                "partition sizes cover {} layers, manifest has {}",
                sizes.iter().sum::<usize>(),
                profile.len()
            )));
        }
        if assigned_node.len() != sizes.len() {
            return Err(Error::InvalidPlan(String::from("one node slot per partition required")));
        }
        let mut boundaries = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &s in sizes {
            boundaries.push(LayerRange::new(start, start + s - 1));
            start += s;
        }
        let per_partition_cost: Vec<u64> = boundaries.iter().map(|r| profile.range_cost(*r)).collect();
        let balance = balance_metric(&per_partition_cost);
        Ok(PartitionPlan {
            boundaries,
            per_partition_cost,
            assigned_node,
            balance,
        })
    }

    pub fn num_partitions(&self) -> usize {
        self.boundaries.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.boundaries.iter().map(LayerRange::len).collect()
    }

    /// Checks contiguity and coverage of `0..num_layers`.
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        let mut next = 0;
        for r in &self.boundaries {
            if r.start != next || r.is_empty() {
                return Err(Error::InvalidPlan(format!("interval {r} does not start at {next}")));
            }
            next = r.end + 1;
        }
        if next != num_layers {
            return Err(Error::InvalidPlan(format!("plan covers {next} of {num_layers} layers")));
        }
        Ok(())
    }
}

/// `(1/n) * sum |L_i - mean|` over partition costs.
pub fn balance_metric(costs: &[u64]) -> f64 {
    if costs.is_empty() {
        return 0.0;
    }
    let n = costs.len() as f64;
    let mean = costs.iter().map(|&c| c as f64).sum::<f64>() / n;
    costs.iter().map(|&c| (c as f64 - mean).abs()).sum::<f64>() / n
}

/// `n^2 * L` in exact integer arithmetic: `sum |n*L_i - total|`.
fn scaled_deviation(costs: &[u64]) -> u128 {
    let n = costs.len() as i128;
    let total: i128 = costs.iter().map(|&c| c as i128).sum();
    costs.iter().map(|&c| (n * c as i128 - total).unsigned_abs()).sum()
}

/// Walks `costs` in order, closing partition `p` once `meets(p, running)`
/// holds. Closing is forced when the layers left equal the partitions still
/// to open, so exactly `k` partitions come out.
fn sequential_split(costs: &[u64], k: usize, mut meets: impl FnMut(usize, u64) -> bool) -> Vec<usize> {
    let n = costs.len();
    let mut sizes = Vec::with_capacity(k);
    let mut running = 0u64;
    let mut count = 0usize;
    for (i, &c) in costs.iter().enumerate() {
        running = running.saturating_add(c);
        count += 1;
        let part = sizes.len();
        if part + 1 < k {
            let remaining_layers = n - i - 1;
            let partitions_left = k - part - 1;
            if remaining_layers == partitions_left || meets(part, running) {
                sizes.push(count);
                running = 0;
                count = 0;
            }
        }
    }
    sizes.push(count);
    sizes
}

fn check_split(profile: &CostProfile, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::ZeroPartitions);
    }
    if k > profile.len() {
        return Err(Error::TooManyPartitions {
            partitions: k,
            layers: profile.len(),
        });
    }
    Ok(())
}

/// Splits into exactly `k` contiguous partitions, closing each once its cost
/// reaches `total / k`. Whatever is left goes to the last partition.
pub fn greedy_partition(profile: &CostProfile, k: usize) -> Result<PartitionPlan> {
    check_split(profile, k)?;
    let costs = profile.effective_costs();
    let total: u128 = costs.iter().map(|&c| c as u128).sum();
    let sizes = sequential_split(&costs, k, |_, running| running as u128 * k as u128 >= total);
    PartitionPlan::from_sizes(profile, &sizes, vec![None; k])
}

/// Splits into one partition per node with targets `ratio_i * total`.
///
/// Partitions are handed out in descending-ratio order (stable for equal
/// ratios), so the first partition goes to the most capable node.
pub fn capability_partition(profile: &CostProfile, shares: &[NodeShare]) -> Result<PartitionPlan> {
    check_split(profile, shares.len())?;
    if shares.iter().any(|s| !s.ratio.is_finite() || s.ratio < 0.0) {
        return Err(Error::InvalidWeights(String::from(
            "allocation ratios must be finite and >= 0",
        )));
    }
    let sum: f64 = shares.iter().map(|s| s.ratio).sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidWeights(format!(
            "allocation ratios sum to {sum}, expected 1"
        )));
    }
    let mut ordered: Vec<&NodeShare> = shares.iter().collect();
    ordered.sort_by(|a, b| b.ratio.total_cmp(&a.ratio));

    let costs = profile.effective_costs();
    let total = costs.iter().map(|&c| c as f64).sum::<f64>();
    // slack absorbs the rounding in ratio * total so that equal ratios close
    // exactly where the integer test in greedy_partition does
    let targets: Vec<f64> = ordered.iter().map(|s| s.ratio * total * (1.0 - 1e-12)).collect();
    let sizes = sequential_split(&costs, ordered.len(), |part, running| running as f64 >= targets[part]);
    let assigned = ordered.iter().map(|s| Some(s.node_id.clone())).collect();
    PartitionPlan::from_sizes(profile, &sizes, assigned)
}

/// Boundary-shift local search on the balance metric.
///
/// Every iteration evaluates moving each internal boundary one layer left
/// and one layer right and applies the single move that lowers the metric
/// most; ties go to the leftmost boundary, then to the left shift. Stops at a
/// local optimum or after `max_iters` moves.
pub fn rebalance(plan: &PartitionPlan, profile: &CostProfile, max_iters: usize) -> Result<PartitionPlan> {
    rebalance_traced(plan, profile, max_iters).map(|(p, _)| p)
}

/// [`rebalance`], also returning the balance metric after each applied move.
pub fn rebalance_traced(
    plan: &PartitionPlan,
    profile: &CostProfile,
    max_iters: usize,
) -> Result<(PartitionPlan, Vec<f64>)> {
    plan.validate(profile.len())?;
    let mut sizes = plan.sizes();
    let mut costs = plan.per_partition_cost.clone();
    let mut current = scaled_deviation(&costs);
    let mut trace = Vec::new();
    let layer = profile.per_layer();

    for _ in 0..max_iters {
        let mut best: Option<(u128, usize, bool)> = None;
        let mut first_layer = 0;
        for b in 0..sizes.len().saturating_sub(1) {
            let split = first_layer + sizes[b]; // first layer of partition b + 1
            for left in [true, false] {
                let mut trial = costs.clone();
                if left {
                    if sizes[b] < 2 {
                        continue;
                    }
                    let moved = layer[split - 1];
                    trial[b] -= moved;
                    trial[b + 1] += moved;
                } else {
                    if sizes[b + 1] < 2 {
                        continue;
                    }
                    let moved = layer[split];
                    trial[b] += moved;
                    trial[b + 1] -= moved;
                }
                let value = scaled_deviation(&trial);
                if value < current && best.is_none_or(|(v, _, _)| value < v) {
                    best = Some((value, b, left));
                }
            }
            first_layer = split;
        }
        let Some((value, b, left)) = best else { break };
        let start_next: usize = sizes[..=b].iter().sum();
        if left {
            let moved = layer[start_next - 1];
            sizes[b] -= 1;
            sizes[b + 1] += 1;
            costs[b] -= moved;
            costs[b + 1] += moved;
        } else {
            let moved = layer[start_next];
            sizes[b] += 1;
            sizes[b + 1] -= 1;
            costs[b] += moved;
            costs[b + 1] -= moved;
        }
        current = value;
        trace.push(balance_metric(&costs));
    }
    let out = PartitionPlan::from_sizes(profile, &sizes, plan.assigned_node.clone())?;
    Ok((out, trace))
}
