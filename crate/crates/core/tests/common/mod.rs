//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crmac::engine::{RunOptions, RunOutput, TrafficMode};
use crmac::schedule::{FrameSchedule, ScheduleEntry};
use crmac::segments::{select_segments, validate_assignment, Assignment, RateRequirement, SegmentId, SelectionRules};
use crmac::spectrum::{ChannelConfig, ChannelTable};
use crmac::topology::{CommunicationGraph, Link, NodeId, Position};
use crmac::{Protocol, Scenario};

/// A small allocator problem: at most 5 nodes, 3 data channels, 4 slots.
#[derive(Debug, Clone)]
pub struct Instance {
    pub graph: CommunicationGraph,
    pub table: ChannelTable,
    pub num_slots: usize,
    pub schedule: FrameSchedule,
    pub link: Link,
    pub demand: f64,
    pub candidates: BTreeSet<SegmentId>,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=5u32);
    let nodes: Vec<NodeId> = (0..n).map(NodeId).collect();
    let mut edges = vec![(NodeId(0), NodeId(1))];
    for a in 0..n {
        for b in a + 1..n {
            if (a, b) != (0, 1) && rng.gen_bool(0.5) {
                edges.push((NodeId(a), NodeId(b)));
            }
        }
    }
    let rates = [2e6, 5.5e6, 11e6];
    let channels = ChannelConfig {
        data_rates: (0..rng.gen_range(1..=3)).map(|_| *rates.choose(&mut rng).unwrap()).collect(),
        ..ChannelConfig::default()
    };
    let table = ChannelTable::from_config(&channels).unwrap();
    let graph = CommunicationGraph::from_edges(&nodes, &edges, &table.all_channel_ids()).unwrap();
    let num_slots = rng.gen_range(1..=4usize);

    let all: Vec<SegmentId> = table
        .data_channels()
        .flat_map(|c| (0..num_slots as u16).map(move |t| SegmentId { channel: c, slot: t }))
        .collect();
    let links = graph.links();
    let mut schedule = FrameSchedule::new(0);
    for _ in 0..rng.gen_range(0..=4) {
        let l = *links.choose(&mut rng).unwrap();
        if l == Link::new(NodeId(0), NodeId(1)) {
            continue;
        }
        schedule.entries.push(ScheduleEntry {
            link: l,
            segment: *all.choose(&mut rng).unwrap(),
            packets: 0,
        });
    }
    let candidates: BTreeSet<SegmentId> = all.iter().copied().filter(|_| rng.gen_bool(0.7)).collect();
    let total: f64 = candidates.iter().map(|s| table.segment_capacity(s.channel, num_slots).unwrap()).sum();
    let demand = rng.gen_range(0.0..=total * 1.2 + 1.0);
    Instance {
        graph,
        table,
        num_slots,
        schedule,
        link: Link::new(NodeId(0), NodeId(1)),
        demand,
        candidates,
    }
}

impl Instance {
    pub fn greedy(&self) -> Assignment {
        select_segments(
            self.link,
            &RateRequirement::new(0, self.demand),
            &self.candidates,
            &self.schedule,
            &self.graph,
            &self.table,
            SelectionRules::new(self.num_slots),
        )
        .unwrap()
    }

    fn capacity(&self, s: SegmentId) -> f64 {
        self.table.segment_capacity(s.channel, self.num_slots).unwrap()
    }

    /// Largest rate any valid subset of the candidates reaches. A valid
    /// subset uses each slot at most once, so it is enough to pick one
    /// channel or nothing per slot.
    pub fn exhaustive_best(&self) -> f64 {
        let per_slot: Vec<Vec<SegmentId>> = (0..self.num_slots as u16)
            .map(|t| self.candidates.iter().copied().filter(|s| s.slot == t).collect())
            .collect();
        let mut best = 0.0f64;
        let mut pick = Vec::new();
        self.search(&per_slot, 0, &mut pick, &mut best);
        best
    }

    fn search(&self, per_slot: &[Vec<SegmentId>], t: usize, pick: &mut Vec<SegmentId>, best: &mut f64) {
        if t == per_slot.len() {
            let a = Assignment {
                link: self.link,
                segments: pick.clone(),
                achieved: pick.iter().map(|&s| self.capacity(s)).sum(),
            };
            if validate_assignment(&a, &self.schedule, &self.graph) {
                *best = best.max(a.achieved);
            }
            return;
        }
        self.search(per_slot, t + 1, pick, best);
        for &s in &per_slot[t] {
            pick.push(s);
            self.search(per_slot, t + 1, pick, best);
            pick.pop();
        }
    }

    /// Every property the greedy must satisfy on this instance.
    pub fn check(&self) -> Result<(), String> {
        let a = self.greedy();
        if !a.segments.iter().all(|s| self.candidates.contains(s)) {
            return Err(format!("picked a non-candidate: {:?}", a.segments));
        }
        if !validate_assignment(&a, &self.schedule, &self.graph) {
            return Err(format!("invalid assignment {:?}", a.segments));
        }
        let sum: f64 = a.segments.iter().map(|&s| self.capacity(s)).sum();
        if (sum - a.achieved).abs() > 1e-6 {
            return Err(format!("achieved {} but segments sum to {sum}", a.achieved));
        }
        let best = self.exhaustive_best();
        if best + 1e-9 >= self.demand && a.achieved + 1e-9 < self.demand {
            return Err(format!("demand {} reachable ({best}) but greedy got {}", self.demand, a.achieved));
        }
        Ok(())
    }
}

/// Chain A-B-C-D, 120 m apart, flows A->B and C->D, no primary users.
pub fn hidden_terminal_scenario(overhear: bool) -> Scenario {
    let mut s = Scenario {
        nodes: 4,
        positions: Some((0..4).map(|i| (NodeId(i), Position::new(f64::from(i) * 120.0, 0.0))).collect()),
        flow_pairs: vec![(0, 1), (2, 3)],
        min_pairs: 2,
        flows: 2,
        warmup: 0.0,
        ..Scenario::default()
    };
    s.duration = 100.0 * s.frame.frame_secs();
    s.pu.count = 0;
    s.traffic.packet_rate = 40.0;
    s.mac.overhear = overhear;
    s
}

/// Desk-scale scenario for the load sweeps: per-flow rates drawn from the
/// session-rate range, 100 s runs.
pub fn trend_scenario() -> Scenario {
    let mut s = Scenario {
        duration: 100.0,
        ..Scenario::default()
    };
    s.traffic.mode = TrafficMode::Demand;
    s
}

pub fn run(s: &Scenario, protocol: Protocol, opts: RunOptions) -> RunOutput {
    let s = Scenario { protocol, ..s.clone() };
    crmac::engine::run_scenario_with(&s, opts).unwrap()
}
