mod common;

use std::collections::BTreeSet;

use crmac::engine::RunOptions;
use crmac::mac::audit_schedule;
use crmac::topology::{CommunicationGraph, Link, NodeId};
use crmac::Protocol;

fn chain_graph() -> CommunicationGraph {
    let s = common::hidden_terminal_scenario(true);
    crmac::engine::build_network(&s).unwrap().graph
}

fn frames_opts() -> RunOptions {
    RunOptions {
        record_frames: true,
        ..RunOptions::default()
    }
}

#[test]
fn overheard_grants_let_both_flows_share_a_slot_on_distinct_channels() {
    let s = common::hidden_terminal_scenario(true);
    let g = chain_graph();
    let out = common::run(&s, Protocol::Crmac, frames_opts());
    assert_eq!(out.frames.len(), 100);
    let (ab, cd) = (Link::new(NodeId(0), NodeId(1)), Link::new(NodeId(2), NodeId(3)));
    let mut concurrent = 0;
    for f in &out.frames {
        assert!(audit_schedule(&f.schedule, &g).is_clean(), "frame {}", f.frame);
        assert_eq!(f.data_failures, 0, "frame {}", f.frame);
        for a in f.schedule.entries.iter().filter(|e| e.link == ab) {
            for b in f.schedule.entries.iter().filter(|e| e.link == cd) {
                if a.segment.slot == b.segment.slot {
                    assert_ne!(a.segment.channel, b.segment.channel);
                    concurrent += 1;
                }
            }
        }
    }
    assert!(concurrent > 0);
    assert_eq!(out.audit.data_collisions, 0);
    assert!(out.counters.conserved());
}

#[test]
fn without_overhearing_the_second_pair_reuses_a_blocked_segment() {
    let s = common::hidden_terminal_scenario(false);
    let g = chain_graph();
    let out = common::run(&s, Protocol::Crmac, frames_opts());
    let conflicting: u64 = out.frames.iter().map(|f| audit_schedule(&f.schedule, &g).conflicting_pairs).sum();
    assert!(conflicting >= 1);
    assert!(out.audit.data_collisions >= 1);
    assert!(out.counters.conserved());
}

#[test]
fn both_links_are_granted_every_frame() {
    let s = common::hidden_terminal_scenario(true);
    let out = common::run(&s, Protocol::Crmac, frames_opts());
    let busy = out.frames.iter().skip(1).filter(|f| {
        let links: BTreeSet<Link> = f.schedule.links();
        links.len() == 2
    });
    assert!(busy.count() >= 90);
}
