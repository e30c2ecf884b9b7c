//! Placement cache for repeated request shapes.
//!
//! Requests are keyed by their rounded requirements and priority. For every
//! key the cache keeps a window of recent execution times and the node that
//! most recently served the key at or below the window's median. That node is
//! offered as a hint; the scheduler still runs the overload, latency and
//! resource checks on it before use.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::TaskRequest;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub enabled: bool,
    /// Rounding step for `cpu_req`, in cores.
    pub cpu_granularity: f64,
    /// Rounding step for `mem_req`, in MiB.
    pub mem_granularity_mib: f64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            enabled: true,
            cpu_granularity: 0.01,
            mem_granularity_mib: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub cpu_steps: i64,
    pub mem_steps: i64,
    pub priority: i32,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Entry {
    window: VecDeque<f64>,
    fast_node: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceCache {
    config: CacheConfig,
    capacity: usize,
    entries: BTreeMap<CacheKey, Entry>,
}

impl PerformanceCache {
    pub fn new(config: CacheConfig, capacity: usize) -> Self {
        PerformanceCache {
            config,
            capacity: capacity.max(1),
            entries: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn key(&self, task: &TaskRequest) -> CacheKey {
        CacheKey {
            cpu_steps: libm::round(task.cpu_req / self.config.cpu_granularity) as i64,
            mem_steps: libm::round(task.mem_req / self.config.mem_granularity_mib) as i64,
            priority: task.priority,
        }
    }

    pub fn lookup(&self, task: &TaskRequest) -> Option<&str> {
        if !self.config.enabled {
            return None;
        }
        self.entries.get(&self.key(task))?.fast_node.as_deref()
    }

    /// Records a completion for `key` on `node_id`.
    pub fn record(&mut self, key: CacheKey, node_id: &str, exec_time: f64) {
        if !self.config.enabled {
            return;
        }
        let entry = self.entries.entry(key).or_default();
        if entry.window.len() == self.capacity {
            entry.window.pop_front();
        }
        entry.window.push_back(exec_time);
        if exec_time <= lower_median(&entry.window) {
            entry.fast_node = Some(String::from(node_id));
        }
    }

    /// Drops every hint that points at `node_id`.
    pub fn forget_node(&mut self, node_id: &str) {
        for entry in self.entries.values_mut() {
            if entry.fast_node.as_deref() == Some(node_id) {
                entry.fast_node = None;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Nearest-rank lower median.
fn lower_median(values: &VecDeque<f64>) -> f64 {
    let mut sorted: Vec<f64> = values.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    sorted[(sorted.len() - 1) / 2]
}

/// Hint for `task`, if the cache has one.
pub fn cache_lookup<'a>(task: &TaskRequest, cache: &'a PerformanceCache) -> Option<&'a str> {
    cache.lookup(task)
}
