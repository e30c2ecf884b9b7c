use std::collections::VecDeque;

use edgepart_core::scheduler::{
    NodeState, Scheduler, SchedulerConfig, ScoreWeights, TaskRecord, TaskRequest, select_node,
};
use proptest::prelude::*;

/// Score recomputed from the textbook formulas, sharing no code with the
/// crate.
fn oracle_score(n: &NodeState, t: &TaskRequest, w: &ScoreWeights) -> f64 {
    let mut dims = Vec::new();
    if t.cpu_req > 0.0 {
        dims.push(n.cpu_avail.max(0.0) / t.cpu_req);
    }
    if t.mem_req > 0.0 {
        dims.push(n.mem_avail.max(0.0) / t.mem_req);
    }
    let s_r = (dims.iter().sum::<f64>() / dims.len() as f64).clamp(0.0, 1.0);
    let s_l = (1.0 - n.current_load).clamp(0.0, 1.0);
    let hist: Vec<f64> = n.exec_history.iter().copied().collect();
    let s_p = if hist.is_empty() {
        1.0
    } else {
        let lo = hist.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = hist.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let avg = if hi > lo {
            hist.iter().map(|e| (e - lo) / (hi - lo)).sum::<f64>() / hist.len() as f64
        } else {
            0.0
        };
        1.0 / (1.0 + avg)
    };
    let s_b = 1.0 / (1.0 + 2.0 * n.task_count as f64);
    w.resource * s_r + w.load * s_l + w.performance * s_p + w.balance * s_b
}

fn oracle_eligible(n: &NodeState, t: &TaskRequest, c: &SchedulerConfig) -> bool {
    n.current_load <= c.overload_threshold
        && n.network_latency <= c.latency_threshold_ms
        && n.cpu_avail >= t.cpu_req
        && n.mem_avail >= t.mem_req
}

/// Naive max-scan: first index holding the maximum score among eligible nodes.
fn oracle_select(t: &TaskRequest, nodes: &[NodeState], c: &SchedulerConfig) -> Option<usize> {
    let scores: Vec<(usize, f64)> = nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| oracle_eligible(n, t, c))
        .map(|(i, n)| (i, oracle_score(n, t, &c.weights)))
        .collect();
    let max = scores.iter().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
    scores.iter().find(|&&(_, s)| s == max).map(|&(i, _)| i)
}

// Coarse grids make exact ties between nodes common.
fn node_strategy() -> impl Strategy<Value = NodeState> {
    (
        0u32..=8,
        0u32..=8,
        0u32..=10,
        prop_oneof![Just(1.0), Just(50.0), Just(100.0), Just(150.0)],
        0u32..=4,
        prop::collection::vec(prop_oneof![Just(100.0), Just(200.0), Just(400.0)], 0..4),
    )
        .prop_map(|(cpu, mem, load, lat, tasks, hist)| NodeState {
            node_id: String::new(),
            cpu_avail: cpu as f64 * 0.25,
            mem_avail: mem as f64 * 128.0,
            current_load: load as f64 / 10.0,
            network_latency: lat,
            task_count: tasks,
            exec_history: VecDeque::from(hist),
        })
}

fn task_strategy() -> impl Strategy<Value = TaskRequest> {
    (0u32..=4, 0u32..=4)
        .prop_filter("some requirement", |(c, m)| c + m > 0)
        .prop_map(|(c, m)| TaskRequest {
            task_id: "t".into(),
            cpu_req: c as f64 * 0.25,
            mem_req: m as f64 * 128.0,
            priority: 0,
        })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10_000, ..ProptestConfig::default() })]

    #[test]
    fn selection_matches_naive_oracle(
        mut nodes in prop::collection::vec(node_strategy(), 0..7),
        task in task_strategy(),
    ) {
        for (i, n) in nodes.iter_mut().enumerate() {
            n.node_id = format!("n{i}");
        }
        let cfg = SchedulerConfig::default();
        let sel = select_node(&task, &nodes, &cfg).unwrap();
        prop_assert_eq!(sel.index, oracle_select(&task, &nodes, &cfg));
        if let Some(i) = sel.index {
            let n = &nodes[i];
            prop_assert!(n.current_load <= 0.8);
            prop_assert!(n.network_latency <= 100.0);
            prop_assert!(n.cpu_avail >= task.cpu_req && n.mem_avail >= task.mem_req);
            let oracle = oracle_score(n, &task, &cfg.weights);
            prop_assert!((sel.score.unwrap() - oracle).abs() < 1e-12);
            // nothing earlier scores as high; nothing at all scores higher
            for (j, m) in nodes.iter().enumerate().filter(|(_, m)| oracle_eligible(m, &task, &cfg)) {
                let s = oracle_score(m, &task, &cfg.weights);
                prop_assert!(s <= oracle);
                if j < i {
                    prop_assert!(s < oracle);
                }
            }
        }
        let eligible = nodes.iter().filter(|n| oracle_eligible(n, &task, &cfg)).count();
        prop_assert_eq!(sel.evaluations, eligible);
    }

    #[test]
    fn identical_nodes_tie_to_the_first(node in node_strategy(), task in task_strategy(), copies in 2usize..6) {
        let nodes: Vec<NodeState> = (0..copies)
            .map(|i| NodeState { node_id: format!("n{i}"), ..node.clone() })
            .collect();
        let sel = select_node(&task, &nodes, &SchedulerConfig::default()).unwrap();
        prop_assert!(sel.index.is_none() || sel.index == Some(0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 500, ..ProptestConfig::default() })]

    /// Random assign/complete sequences keep task counts, reservations and
    /// history bounds consistent.
    #[test]
    fn bookkeeping_stays_consistent(ops in prop::collection::vec((0u8..3, 0u32..5, 1u32..500), 1..120)) {
        let cfg = SchedulerConfig { history_capacity: 5, ..SchedulerConfig::default() };
        let mut s = Scheduler::new(cfg).unwrap();
        for i in 0..3 {
            s.add_node(NodeState::new(format!("n{i}"), 1.0, 1024.0, 5.0)).unwrap();
        }
        let mut live: Vec<(String, String)> = Vec::new();
        let mut next = 0;
        for (op, pick, exec) in ops {
            if op < 2 {
                let t = TaskRequest { task_id: format!("t{next}"), cpu_req: 0.25, mem_req: 64.0, priority: 0 };
                next += 1;
                if let Some(p) = s.schedule(&t, None).unwrap() {
                    live.push((t.task_id, p.node_id));
                }
            } else if !live.is_empty() {
                let (task, node) = live.remove(pick as usize % live.len());
                let mut r = TaskRecord::new(task, node, 0.0, 0.0, exec as f64).unwrap();
                s.complete_task(&mut r).unwrap();
                prop_assert!((0.0..=1.0).contains(&r.normalized_perf));
            }
            prop_assert_eq!(s.in_flight_count(), live.len());
            for n in s.nodes() {
                let mine = live.iter().filter(|(_, id)| *id == n.node_id).count();
                prop_assert_eq!(n.task_count as usize, mine);
                prop_assert!((n.cpu_avail - (1.0 - 0.25 * mine as f64)).abs() < 1e-12);
                prop_assert!(n.cpu_avail >= -1e-12);
                prop_assert!(n.exec_history.len() <= 5);
            }
        }
    }
}

#[test]
fn evaluation_count_is_m_times_n() {
    let mut s = Scheduler::new(SchedulerConfig {
        cache: edgepart_core::scheduler::CacheConfig {
            enabled: false,
            ..Default::default()
        },
        ..SchedulerConfig::default()
    })
    .unwrap();
    for i in 0..5 {
        s.add_node(NodeState::new(format!("n{i}"), 1000.0, 1e9, 1.0)).unwrap();
    }
    for m in 0..1000 {
        let t = TaskRequest {
            task_id: format!("t{m}"),
            cpu_req: 0.1,
            mem_req: 1.0,
            priority: 0,
        };
        s.select(&t, None).unwrap().unwrap();
    }
    assert_eq!(s.counters().score_evaluations, 5 * 1000);
}
