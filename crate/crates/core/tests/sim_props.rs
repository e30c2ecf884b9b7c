use edgepart_core::manifest::{LayerSpec, ModelManifest};
use edgepart_core::metrics::{MetricsReport, compare, percentile};
use edgepart_core::partitioner::CapabilityWeights;
use edgepart_core::sim::{
    Arrival, MembershipAction, MembershipEvent, NodeProfile, NodeSpec, Scenario, Strategy as Split, run_scenario,
};
use proptest::prelude::*;

fn model(n: usize) -> ModelManifest {
    let layers = (0..n)
        .map(|i| LayerSpec::other(i, 2_000_000 + 500_000 * i as u64))
        .collect();
    ModelManifest::new("m", layers).unwrap()
}

fn profile() -> impl Strategy<Value = NodeProfile> {
    prop_oneof![
        Just(NodeProfile::HIGH),
        Just(NodeProfile::MEDIUM),
        Just(NodeProfile::LOW)
    ]
}

fn scenario() -> impl Strategy<Value = Scenario> {
    (
        any::<u64>(),
        prop::collection::vec(profile(), 0..4),
        prop::collection::vec((0u32..6_000, profile(), any::<bool>(), 0usize..4), 0..5),
        prop_oneof![
            (1u32..8).prop_map(|c| Arrival::ClosedLoop { concurrency: c }),
            (1u32..20).prop_map(|r| Arrival::FixedRate { rate_rps: r as f64 }),
            (1u32..20).prop_map(|r| Arrival::Poisson { rate_rps: r as f64 }),
        ],
        prop_oneof![
            (1usize..4).prop_map(|k| Split::Greedy {
                partitions: k,
                rebalance_iters: 20
            }),
            Just(Split::Capability {
                weights: CapabilityWeights::default()
            }),
        ],
        0u32..2_000,
        any::<bool>(),
    )
        .prop_map(|(seed, nodes, events, arrival, strategy, warmup, cache)| {
            let nodes: Vec<NodeSpec> = nodes
                .into_iter()
                .enumerate()
                .map(|(i, p)| NodeSpec::new(format!("n{i}"), p, 2.0))
                .collect();
            let mut s = Scenario::new(model(6), nodes);
            s.seed = seed;
            s.warmup_ms = warmup as f64;
            s.measurement_ms = 6_000.0;
            s.workload.arrival = arrival;
            s.strategy = strategy;
            s.scheduler.cache.enabled = cache;
            // joins use fresh ids; leaves may name nodes that are gone, and
            // such events are dropped rather than failing the run
            for (i, (at, p, join, target)) in events.into_iter().enumerate() {
                let action = if join {
                    MembershipAction::Join(NodeSpec::new(format!("j{i}"), p, 2.0))
                } else {
                    MembershipAction::Leave(format!("n{target}"))
                };
                s.events.push(MembershipEvent {
                    at_ms: at as f64,
                    action,
                });
            }
            s
        })
}

/// Keeps only the leave events that name a node alive at that moment.
fn consistent(mut s: Scenario) -> Scenario {
    let mut alive: Vec<String> = s.nodes.iter().map(|n| n.id.clone()).collect();
    s.events.sort_by(|a, b| a.at_ms.total_cmp(&b.at_ms));
    s.events.retain(|e| match &e.action {
        MembershipAction::Join(n) => {
            alive.push(n.id.clone());
            true
        }
        MembershipAction::Leave(id) => {
            let pos = alive.iter().position(|a| a == id);
            pos.map(|p| alive.remove(p)).is_some()
        }
    });
    s
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 150, ..ProptestConfig::default() })]

    /// Conservation and membership checks run inside the engine after every
    /// event; a breach surfaces as an error here.
    #[test]
    fn random_scenarios_hold_invariants(s in scenario().prop_map(consistent)) {
        let out = run_scenario(&s).unwrap();
        prop_assert_eq!(&out, &run_scenario(&s).unwrap());

        let c = out.report.counts;
        prop_assert_eq!(c.submitted, c.completed + requests_left(&out));
        for smp in &out.samples {
            prop_assert!((0.0..=100.0).contains(&smp.cpu_pct));
            prop_assert!((0.0..=100.0).contains(&smp.mem_pct));
        }
        // no work lands on a node after it left; leave targets never rejoin
        for e in &s.events {
            if let MembershipAction::Leave(id) = &e.action {
                for t in out.task_records.iter().filter(|t| &t.node_id == id) {
                    prop_assert!(t.end_time <= e.at_ms);
                }
                prop_assert!(out.samples.iter().filter(|x| &x.node_id == id).all(|x| x.time_ms < e.at_ms));
            }
        }
        let r = &out.report;
        if let (Some(p50), Some(p95)) = (r.inference_latency_ms.p50, r.inference_latency_ms.p95) {
            prop_assert!(p50 <= p95);
        }
        let st = r.stability_score.unwrap_or(0.0);
        prop_assert!((0.0..=1.0).contains(&st));
        prop_assert_eq!(r.throughput_rps * s.measurement_ms / 1000.0, c.measured as f64);
    }
}

fn requests_left(out: &edgepart_core::sim::SimOutput) -> u64 {
    let done: std::collections::BTreeSet<u64> = out.request_records.iter().map(|r| r.request_id).collect();
    out.report.counts.submitted - done.len() as u64
}

fn report_with(latency: f64, throughput: f64) -> MetricsReport {
    let s = Scenario::new(model(2), vec![NodeSpec::new("a", NodeProfile::HIGH, 1.0)]);
    let mut r = run_scenario(&s).unwrap().report;
    r.inference_latency_ms.mean = Some(latency);
    r.throughput_rps = throughput;
    r
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 2_000, ..ProptestConfig::default() })]

    #[test]
    fn percentiles_are_monotone(mut v in prop::collection::vec(-1e6f64..1e6, 1..200)) {
        v.sort_by(f64::total_cmp);
        let p50 = percentile(&v, 50).unwrap();
        let p95 = percentile(&v, 95).unwrap();
        prop_assert!(p50 <= p95);
        prop_assert!(v.contains(&p50) && v.contains(&p95));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 50, ..ProptestConfig::default() })]

    #[test]
    fn compare_signs(a in 1.0f64..1e4, b in 1.0f64..1e4, ta in 0.1f64..100.0, tb in 0.1f64..100.0) {
        let ra = report_with(a, ta);
        let rb = report_with(b, tb);
        let same = compare(&ra, &ra).unwrap();
        prop_assert!(same.rows.iter().all(|r| r.delta_pct.is_none_or(|d| d == 0.0)));
        let ab = compare(&ra, &rb).unwrap();
        let ba = compare(&rb, &ra).unwrap();
        for (x, y) in ab.rows.iter().zip(&ba.rows) {
            if let (Some(dx), Some(dy)) = (x.delta_pct, y.delta_pct) {
                prop_assert!(dx * dy <= 0.0, "{}: {dx} vs {dy}", x.metric);
                prop_assert_eq!(dx == 0.0, dy == 0.0);
            }
        }
    }
}
