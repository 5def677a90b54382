mod common;

use proptest::prelude::*;

use crmac::engine::{build_network, run_scenario_with, RunOptions};
use crmac::topology::{NodeId, Position};
use crmac::{Protocol, Scenario};

fn small(seed: u64, topology_id: u32, flows: usize) -> Scenario {
    Scenario {
        seed,
        topology_id,
        nodes: 20,
        area_width: 500.0,
        area_height: 400.0,
        min_pairs: 6,
        flows,
        duration: 6.0,
        warmup: 1.0,
        ..Scenario::default()
    }
}

#[test]
fn repeated_runs_are_identical() {
    let s = common::trend_scenario();
    let s = Scenario { duration: 8.0, flows: 8, ..s };
    for p in [Protocol::Crmac, Protocol::Baseline] {
        let a = common::run(&s, p, RunOptions { trace: true, record_frames: true });
        let b = common::run(&s, p, RunOptions { trace: true, record_frames: true });
        assert_eq!(a.counters, b.counters);
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.trace, b.trace);
    }
}

#[test]
fn diagnostics_do_not_change_results() {
    let s = Scenario { duration: 5.0, ..Scenario::default() };
    let plain = common::run(&s, Protocol::Crmac, RunOptions::default());
    let traced = common::run(&s, Protocol::Crmac, RunOptions { trace: true, record_frames: true });
    assert_eq!(plain.counters, traced.counters);
}

#[test]
fn zero_duration_produces_nothing() {
    let s = Scenario { duration: 0.0, warmup: 0.0, ..Scenario::default() };
    for p in [Protocol::Crmac, Protocol::Baseline] {
        let out = common::run(&s, p, RunOptions::default());
        assert_eq!(out.counters.total_generated, 0);
        assert_eq!(out.metrics.pdr, None);
        assert_eq!(out.metrics.mean_delay_s, None);
        assert_eq!(out.metrics.throughput_bps, 0.0);
    }
}

#[test]
fn lone_light_flow_delivers_everything() {
    let s = Scenario {
        nodes: 2,
        positions: Some(vec![(NodeId(0), Position::new(0.0, 0.0)), (NodeId(1), Position::new(100.0, 0.0))]),
        flow_pairs: vec![(0, 1)],
        flows: 1,
        min_pairs: 1,
        duration: 30.0,
        warmup: 1.0,
        ..Scenario::default()
    };
    let mut s = s;
    s.pu.count = 0;
    for p in [Protocol::Crmac, Protocol::Baseline] {
        let out = common::run(&s, p, RunOptions::default());
        assert!(out.metrics.generated > 100);
        // Packets still queued at the end are neither delivered nor lost.
        assert_eq!(out.metrics.dropped, 0, "{p}");
        assert_eq!(out.metrics.delivered + out.metrics.queued_at_end, out.metrics.generated, "{p}");
        assert!(out.metrics.pdr.unwrap() > 0.98, "{p}");
    }
}

#[test]
fn relays_forward_along_the_route() {
    let s = common::trend_scenario();
    let s = Scenario { duration: 10.0, warmup: 1.0, flows: 6, ..s };
    let net = build_network(&s).unwrap();
    assert!(net.flows.iter().any(|f| f.route.len() > 2), "expected a multi-hop flow");
    for p in [Protocol::Crmac, Protocol::Baseline] {
        let out = common::run(&s, p, RunOptions::default());
        assert!(out.counters.conserved(), "{p}");
        assert!(out.metrics.delivered > 0, "{p}");
    }
}

#[test]
fn invalid_scenarios_fail_before_running() {
    let mut s = Scenario::default();
    s.frame.num_slots = 0;
    assert!(run_scenario_with(&s, RunOptions::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn packets_are_conserved(
        seed in 0u64..1000,
        topology_id in 0u32..50,
        flows in 1usize..6,
        queue_limit in 1usize..8,
        midframe in any::<bool>(),
        demand in any::<bool>(),
    ) {
        let mut s = small(seed, topology_id, flows);
        s.mac.queue_limit = queue_limit;
        s.pu.midframe_toggle = midframe;
        if demand {
            s.traffic.mode = crmac::engine::TrafficMode::Demand;
        }
        for p in [Protocol::Crmac, Protocol::Baseline] {
            let out = common::run(&s, p, RunOptions::default());
            let c = &out.counters;
            prop_assert!(c.conserved(), "{p}: {c:?}");
            prop_assert_eq!(c.total_generated, c.total_delivered + c.total_dropped + c.total_queued_at_end);
        }
    }
}
