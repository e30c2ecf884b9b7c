use alloc::collections::VecDeque;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use super::scenario::NodeSpec;

/// One monitor reading of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceSample {
    pub time_ms: f64,
    pub node_id: String,
    pub cpu_pct: f64,
    pub mem_used_mib: f64,
    pub mem_pct: f64,
    /// Cumulative since the node joined.
    pub net_rx_bytes: u64,
    pub net_tx_bytes: u64,
}

/// Simulated state of a live node. Times are microseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRuntime {
    pub spec: NodeSpec,
    /// When the node finishes the last task queued on it.
    pub free_at_us: u64,
    /// Committed execution intervals, oldest first, never overlapping.
    busy: VecDeque<(u64, u64)>,
    pub reserved_mem_mib: f64,
    pub rx_bytes: u64,
    pub tx_bytes: u64,
}

impl NodeRuntime {
    pub fn new(spec: NodeSpec, now_us: u64) -> Self {
        NodeRuntime {
            spec,
            free_at_us: now_us,
            busy: VecDeque::new(),
            reserved_mem_mib: 0.0,
            rx_bytes: 0,
            tx_bytes: 0,
        }
    }

    /// Queues `exec_us` of work that cannot start before `ready_us`.
    /// Returns the `(start, end)` interval it will occupy.
    pub fn commit(&mut self, ready_us: u64, exec_us: u64) -> (u64, u64) {
        let start = self.free_at_us.max(ready_us);
        let end = start + exec_us;
        self.free_at_us = end;
        if exec_us > 0 {
            self.busy.push_back((start, end));
        }
        (start, end)
    }

    /// Removes every interval that has not started by `now_us` and truncates
    /// the running one, as when the node's queued work is abandoned.
    pub fn abandon_after(&mut self, now_us: u64) {
        self.busy.retain(|&(s, _)| s < now_us);
        if let Some(last) = self.busy.back_mut() {
            last.1 = last.1.min(now_us);
        }
        self.free_at_us = now_us;
    }

    /// Busy microseconds inside `[from, to)`.
    pub fn busy_us(&self, from: u64, to: u64) -> u64 {
        self.busy
            .iter()
            .map(|&(s, e)| e.min(to).saturating_sub(s.max(from)))
            .sum()
    }

    /// Busy fraction of the `window_us` ending at `now_us`. Time before the
    /// clock origin counts as idle.
    pub fn busy_fraction(&self, now_us: u64, window_us: u64) -> f64 {
        if window_us == 0 {
            return 0.0;
        }
        let busy = self.busy_us(now_us.saturating_sub(window_us), now_us);
        (busy as f64 / window_us as f64).min(1.0)
    }

    /// Drops intervals that ended before `horizon_us`.
    pub fn prune(&mut self, horizon_us: u64) {
        while self.busy.front().is_some_and(|&(_, e)| e < horizon_us) {
            self.busy.pop_front();
        }
    }
}

/// Reads `node` over the `window_ms` ending at `time_ms`.
pub fn monitor_sample(node: &NodeRuntime, time_ms: f64, window_ms: f64) -> ResourceSample {
    let now = super::engine::ms_to_us(time_ms);
    let window = super::engine::ms_to_us(window_ms);
    let mem = &node.spec.profile.memory_mib;
    ResourceSample {
        time_ms,
        node_id: node.spec.id.clone(),
        cpu_pct: node.busy_fraction(now, window) * 100.0,
        mem_used_mib: node.reserved_mem_mib,
        mem_pct: (node.reserved_mem_mib / mem * 100.0).clamp(0.0, 100.0),
        net_rx_bytes: node.rx_bytes,
        net_tx_bytes: node.tx_bytes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::NodeProfile;

    fn runtime() -> NodeRuntime {
        NodeRuntime::new(NodeSpec::new("a", NodeProfile::HIGH, 1.0), 0)
    }

    #[test]
    fn idle_node_reads_zero() {
        let n = runtime();
        let s = monitor_sample(&n, 1000.0, 100.0);
        assert_eq!(s.cpu_pct, 0.0);
        assert_eq!((s.net_rx_bytes, s.net_tx_bytes), (0, 0));
        assert_eq!(s.mem_used_mib, 0.0);
    }

    #[test]
    fn saturated_window_reads_full() {
        let mut n = runtime();
        n.commit(0, 2_000_000);
        assert_eq!(monitor_sample(&n, 1000.0, 100.0).cpu_pct, 100.0);
    }

    #[test]
    fn partial_window() {
        let mut n = runtime();
        // busy 950..975 ms
        n.commit(950_000, 25_000);
        assert_eq!(monitor_sample(&n, 1000.0, 100.0).cpu_pct, 25.0);
        assert_eq!(n.busy_fraction(1_000_000, 1_000_000), 0.025);
    }

    #[test]
    fn fifo_commit_queues_behind_running_work() {
        let mut n = runtime();
        assert_eq!(n.commit(0, 100), (0, 100));
        assert_eq!(n.commit(50, 100), (100, 200));
        assert_eq!(n.commit(500, 10), (500, 510));
        n.abandon_after(150);
        assert_eq!(n.busy_us(0, 1000), 150);
        assert_eq!(n.free_at_us, 150);
    }

    #[test]
    fn memory_percentage() {
        let mut n = NodeRuntime::new(NodeSpec::new("a", NodeProfile::LOW, 1.0), 0);
        n.reserved_mem_mib = 128.0;
        let s = monitor_sample(&n, 1.0, 100.0);
        assert_eq!(s.mem_pct, 25.0);
    }
}
