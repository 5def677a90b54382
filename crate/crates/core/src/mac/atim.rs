//! The ATIM window: beacons, then mini-slotted contention for three-way
//! ATIM / ATIM-ACK / ATIM-RES negotiations on the control channel.
//!
//! Contention model: each initiator draws a backoff uniform in
//! `[0, W-1]` mini-slots and counts it down while the medium around it is
//! idle. A handshake occupies three consecutive mini-slots and reserves
//! its *region*, the closed control-range neighborhood of both endpoints.
//! Two handshakes may overlap in time only if their regions are disjoint:
//!
//! * initiators starting in the same mini-slot with intersecting regions
//!   collide and both negotiations fail for this frame;
//! * an initiator whose region touches a running handshake defers and
//!   redraws its backoff;
//! * nodes inside a running or starting handshake's region freeze their
//!   backoff.
//!
//! Every node in a region hears the whole exchange, so with overhearing on
//! all nodes able to interfere with a grant learn it before negotiating.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;

use crate::error::Result;
use crate::mac::{ControlMessage, NodeMacState};
use crate::schedule::FrameSchedule;
use crate::segments::{select_segments, update_from_beacons, Assignment, RateRequirement, SegmentId, SegmentStatus, SegmentTable, SelectionRules};
use crate::spectrum::{ChannelId, ChannelTable};
use crate::time::SimTime;
use crate::topology::{CommunicationGraph, Link, NodeId};
use crate::trace::{Trace, TraceRecord};

pub trait BackoffSource {
    /// Uniform draw in `[0, window - 1]`.
    fn draw(&mut self, node: NodeId, window: u32) -> u32;
}

#[derive(Debug, Clone)]
pub struct RngBackoff<R>(pub R);

impl<R: Rng> BackoffSource for RngBackoff<R> {
    fn draw(&mut self, _node: NodeId, window: u32) -> u32 {
        self.0.gen_range(0..window.max(1))
    }
}

/// Closed control-range neighborhoods as bitsets over dense node indices.
#[derive(Debug, Clone)]
pub struct ControlRegions {
    words: usize,
    sets: Vec<Vec<u64>>,
}

impl ControlRegions {
    pub fn new(g: &CommunicationGraph) -> Self {
        let n = g.len();
        let words = n.div_ceil(64).max(1);
        let ids = g.node_ids();
        let range = g.profile().control_tx_range;
        let pos: Vec<_> = ids.iter().map(|&v| g.position(v).expect("node listed by graph")).collect();
        let mut sets = vec![vec![0u64; words]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j || pos[i].distance(&pos[j]) <= range {
                    sets[i][j / 64] |= 1 << (j % 64);
                }
            }
        }
        ControlRegions { words, sets }
    }

    fn empty(&self) -> Vec<u64> {
        vec![0; self.words]
    }

    fn union_of(&self, a: usize, b: usize) -> Vec<u64> {
        self.sets[a].iter().zip(&self.sets[b]).map(|(x, y)| x | y).collect()
    }

    pub fn hears(&self, listener: usize, sender: usize) -> bool {
        contains(&self.sets[sender], listener)
    }
}

fn contains(set: &[u64], i: usize) -> bool {
    set[i / 64] & (1 << (i % 64)) != 0
}

fn intersects(a: &[u64], b: &[u64]) -> bool {
    a.iter().zip(b).any(|(x, y)| x & y != 0)
}

fn add_into(acc: &mut [u64], set: &[u64]) {
    for (a, s) in acc.iter_mut().zip(set) {
        *a |= s;
    }
}

fn members(set: &[u64]) -> impl Iterator<Item = usize> + '_ {
    set.iter().enumerate().flat_map(|(w, &bits)| (0..64).filter(move |b| bits & (1 << b) != 0).map(move |b| w * 64 + b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegotiationRequest {
    pub initiator: NodeId,
    pub responder: NodeId,
    pub demand: RateRequirement,
}

impl NegotiationRequest {
    pub fn link(&self) -> Link {
        Link::new(self.initiator, self.responder)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AtimParams {
    pub frame: u64,
    /// Start of the beacon phase.
    pub beacon_start: SimTime,
    /// Start of contention mini-slot 0.
    pub start: SimTime,
    pub mini_slot: SimTime,
    pub mini_slots: usize,
    pub contention_window: u32,
    pub max_negotiations: usize,
    pub overhear: bool,
    pub rules: SelectionRules,
}

/// What the rest of the network needs to step the window.
pub struct AtimEnv<'a> {
    pub graph: &'a CommunicationGraph,
    pub regions: &'a ControlRegions,
    pub channels: &'a ChannelTable,
    /// Indexed like `graph.node_ids()`.
    pub nodes: &'a mut [NodeMacState],
    pub backoff: &'a mut dyn BackoffSource,
    pub trace: &'a mut Trace,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AtimOutcome {
    pub confirmed: Vec<Assignment>,
    pub schedule: FrameSchedule,
    /// Negotiations lost to simultaneous control transmissions.
    pub collisions: u32,
    /// Attempts deferred because a handshake nearby was running.
    pub deferrals: u32,
    /// Responders that found nothing to offer.
    pub refused: u32,
    pub rollbacks: u32,
    /// Requests still waiting when the window closed.
    pub unserved: u32,
}

#[derive(Debug)]
struct Contender {
    node: usize,
    pending: VecDeque<NegotiationRequest>,
    counter: u32,
    attempts: usize,
    drawn_at: Option<usize>,
}

#[derive(Debug)]
struct Handshake {
    initiator: usize,
    responder: usize,
    request: NegotiationRequest,
    start: usize,
    region: Vec<u64>,
    offered: BTreeSet<SegmentId>,
    chosen: Option<Vec<SegmentId>>,
    responder_before: Option<SegmentTable>,
}

#[derive(Debug)]
pub struct AtimWindow {
    params: AtimParams,
    contenders: Vec<Contender>,
    active: Vec<Handshake>,
    outcome: AtimOutcome,
    next: usize,
}

impl AtimWindow {
    /// Beacon phase, then initial backoff draws. Requests are served per
    /// initiator in the order given.
    pub fn open(params: AtimParams, requests: &[NegotiationRequest], env: &mut AtimEnv<'_>) -> Result<Self> {
        let ids = env.graph.node_ids();
        for (i, st) in env.nodes.iter().enumerate() {
            let msg = ControlMessage::Beacon {
                sender: ids[i],
                available: st.report.available.clone(),
                assignments: Vec::new(),
            };
            env.trace.emit(|| {
                TraceRecord::new(params.beacon_start, msg.sender(), msg.kind())
                    .frame(params.frame)
                    .ch(ChannelId::CONTROL)
                    .with("available", available_list(&msg))
            });
        }

        let mut contenders: Vec<Contender> = Vec::new();
        for req in requests {
            let node = env.graph.index_of(req.initiator)?;
            env.graph.index_of(req.responder)?;
            match contenders.iter_mut().find(|c| c.node == node) {
                Some(c) => c.pending.push_back(*req),
                None => contenders.push(Contender {
                    node,
                    pending: VecDeque::from([*req]),
                    counter: 0,
                    attempts: 0,
                    drawn_at: None,
                }),
            }
        }
        contenders.sort_by_key(|c| c.node);
        for c in &mut contenders {
            c.counter = env.backoff.draw(ids[c.node], params.contention_window);
        }
        Ok(AtimWindow {
            params,
            contenders,
            active: Vec::new(),
            outcome: AtimOutcome {
                schedule: FrameSchedule::new(params.frame),
                ..AtimOutcome::default()
            },
            next: 0,
        })
    }

    pub fn next_mini_slot(&self) -> usize {
        self.next
    }

    /// Nothing left to contend for and nothing in flight.
    pub fn is_idle(&self) -> bool {
        self.active.is_empty() && self.contenders.iter().all(|c| !self.can_contend(c))
    }

    fn can_contend(&self, c: &Contender) -> bool {
        !c.pending.is_empty() && c.attempts < self.params.max_negotiations
    }

    fn time(&self, m: usize) -> SimTime {
        self.params.start + self.params.mini_slot * m as u64
    }

    pub fn step(&mut self, env: &mut AtimEnv<'_>) -> Result<()> {
        let m = self.next;
        assert!(m < self.params.mini_slots, "ATIM window has only {} mini-slots", self.params.mini_slots);
        self.next += 1;
        let t = self.time(m);
        let frame = self.params.frame;
        let ids = env.graph.node_ids();

        let mut busy = env.regions.empty();
        for h in &self.active {
            add_into(&mut busy, &h.region);
        }

        let mut starters: Vec<(usize, Vec<u64>)> = Vec::new();
        for ci in 0..self.contenders.len() {
            let c = &self.contenders[ci];
            if !self.can_contend(c) || c.counter > 0 || contains(&busy, c.node) {
                continue;
            }
            let req = c.pending[0];
            let r = env.graph.index_of(req.responder)?;
            let region = env.regions.union_of(c.node, r);
            if intersects(&region, &busy) {
                self.outcome.deferrals += 1;
                env.trace.emit(|| {
                    TraceRecord::new(t, req.initiator, "atim-defer")
                        .frame(frame)
                        .ch(ChannelId::CONTROL)
                        .peer(req.responder)
                });
                let c = &mut self.contenders[ci];
                c.counter = env.backoff.draw(ids[c.node], self.params.contention_window);
                c.drawn_at = Some(m);
                continue;
            }
            starters.push((ci, region));
        }

        let mut hearing = busy.clone();
        for (_, region) in &starters {
            add_into(&mut hearing, region);
        }

        let collided: Vec<bool> = (0..starters.len())
            .map(|a| (0..starters.len()).any(|b| a != b && intersects(&starters[a].1, &starters[b].1)))
            .collect();
        for ((ci, region), lost) in starters.into_iter().zip(collided) {
            let req = self.contenders[ci].pending.pop_front().expect("starter has a request");
            self.contenders[ci].attempts += 1;
            if lost {
                self.outcome.collisions += 1;
                env.trace.emit(|| {
                    TraceRecord::new(t, req.initiator, "atim-collision")
                        .frame(frame)
                        .ch(ChannelId::CONTROL)
                        .peer(req.responder)
                });
            } else {
                let h = self.start_handshake(m, req, region, env)?;
                self.active.push(h);
            }
            let c = &mut self.contenders[ci];
            c.counter = env.backoff.draw(ids[c.node], self.params.contention_window);
            c.drawn_at = Some(m);
        }

        for c in &mut self.contenders {
            if c.drawn_at != Some(m) && c.counter > 0 && !contains(&hearing, c.node) {
                c.counter -= 1;
            }
        }

        let (done, running): (Vec<_>, Vec<_>) = std::mem::take(&mut self.active).into_iter().partition(|h| h.start + 2 == m);
        self.active = running;
        for h in done {
            self.complete(h, m, env);
        }
        Ok(())
    }

    fn start_handshake(&mut self, m: usize, req: NegotiationRequest, region: Vec<u64>, env: &mut AtimEnv<'_>) -> Result<Handshake> {
        let t = self.time(m);
        let frame = self.params.frame;
        let i = env.graph.index_of(req.initiator)?;
        let r = env.graph.index_of(req.responder)?;
        let offered = env.nodes[i].table.free_segments();
        let atim = ControlMessage::Atim {
            sender: req.initiator,
            receiver: req.responder,
            free: offered.clone(),
        };
        env.trace.emit(|| {
            TraceRecord::new(t, atim.sender(), atim.kind())
                .frame(frame)
                .ch(ChannelId::CONTROL)
                .peer(req.responder)
                .with("free", offered.len())
                .with("demand", req.demand.remaining)
        });

        let candidates: BTreeSet<SegmentId> = offered
            .iter()
            .copied()
            .filter(|&s| env.nodes[r].table.status(s) == SegmentStatus::Free)
            .collect();
        let assignment = if candidates.is_empty() {
            Assignment::empty(req.link())
        } else {
            select_segments(
                req.link(),
                &req.demand,
                &candidates,
                &env.nodes[r].known,
                env.graph,
                env.channels,
                self.params.rules,
            )?
        };

        let mut h = Handshake {
            initiator: i,
            responder: r,
            request: req,
            start: m,
            region,
            offered,
            chosen: None,
            responder_before: None,
        };
        if assignment.is_empty() {
            self.outcome.refused += 1;
            env.trace.emit(|| {
                TraceRecord::new(t + self.params.mini_slot, req.responder, "atim-refuse")
                    .frame(frame)
                    .ch(ChannelId::CONTROL)
                    .peer(req.initiator)
                    .with("bandwidth", candidates.len())
            });
            return Ok(h);
        }

        let ack = ControlMessage::AtimAck {
            sender: req.responder,
            receiver: req.initiator,
            chosen: assignment.segments.clone(),
        };
        debug_assert!(assignment.segments.iter().all(|s| h.offered.contains(s)));
        env.trace.emit(|| {
            TraceRecord::new(t + self.params.mini_slot, ack.sender(), ack.kind())
                .frame(frame)
                .ch(ChannelId::CONTROL)
                .peer(req.initiator)
                .with("segments", segment_list(&assignment.segments))
        });
        h.responder_before = Some(env.nodes[r].table.clone());
        for &s in &assignment.segments {
            env.nodes[r].table.assign(s);
        }
        h.chosen = Some(assignment.segments);
        Ok(h)
    }

    fn complete(&mut self, h: Handshake, m: usize, env: &mut AtimEnv<'_>) {
        let t = self.time(m);
        let frame = self.params.frame;
        let Some(chosen) = h.chosen.clone() else {
            return;
        };
        let init = &env.nodes[h.initiator];
        let honored = chosen.iter().all(|&s| init.table.status(s) == SegmentStatus::Free);
        if !honored {
            self.rollback(&h, t, "atim-withdraw", env);
            return;
        }
        let res = ControlMessage::AtimRes {
            sender: h.request.initiator,
            receiver: h.request.responder,
            confirmed: chosen.clone(),
        };
        env.trace.emit(|| {
            TraceRecord::new(t, res.sender(), res.kind())
                .frame(frame)
                .ch(ChannelId::CONTROL)
                .peer(h.request.responder)
                .with("segments", segment_list(&chosen))
        });

        let link = h.request.link();
        let achieved = chosen
            .iter()
            .map(|s| env.channels.segment_capacity(s.channel, self.params.rules.num_slots).unwrap_or(0.0))
            .sum();
        let grant = Assignment {
            link,
            segments: chosen,
            achieved,
        };
        for &s in &grant.segments {
            env.nodes[h.initiator].table.assign(s);
            env.trace.emit(|| {
                TraceRecord::new(t, link.tx, "grant")
                    .frame(frame)
                    .ch(s.channel)
                    .slot(s.slot)
                    .peer(link.rx)
            });
        }
        env.nodes[h.initiator].known.add_assignment(&grant);
        env.nodes[h.responder].known.add_assignment(&grant);

        if self.params.overhear {
            for k in members(&h.region) {
                if k == h.initiator || k == h.responder || k >= env.nodes.len() {
                    continue;
                }
                let st = &mut env.nodes[k];
                st.table = update_from_beacons(&st.table, std::slice::from_ref(&grant), env.graph);
                st.known.add_assignment(&grant);
            }
        }
        self.outcome.schedule.add_assignment(&grant);
        self.outcome.confirmed.push(grant);
    }

    fn rollback(&mut self, h: &Handshake, t: SimTime, ev: &'static str, env: &mut AtimEnv<'_>) {
        if let Some(before) = &h.responder_before {
            env.nodes[h.responder].table = before.clone();
            self.outcome.rollbacks += 1;
            env.trace.emit(|| {
                TraceRecord::new(t, h.request.responder, ev)
                    .frame(self.params.frame)
                    .ch(ChannelId::CONTROL)
                    .peer(h.request.initiator)
            });
        }
    }

    /// Closes the window: unfinished handshakes roll back and waiting
    /// requests carry over to the next frame.
    pub fn finish(mut self, env: &mut AtimEnv<'_>) -> AtimOutcome {
        let t = self.time(self.params.mini_slots);
        for h in std::mem::take(&mut self.active) {
            self.rollback(&h, t, "atim-timeout", env);
        }
        self.outcome.unserved = self.contenders.iter().map(|c| c.pending.len() as u32).sum();
        self.outcome
    }
}

fn available_list(msg: &ControlMessage) -> String {
    match msg {
        ControlMessage::Beacon { available, .. } => {
            available.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
        }
        _ => String::new(),
    }
}

fn segment_list(segs: &[SegmentId]) -> String {
    segs.iter().map(|s| format!("{}/{}", s.channel, s.slot)).collect::<Vec<_>>().join(",")
}

/// Runs a whole ATIM window at once.
pub fn atim_window_run(params: AtimParams, requests: &[NegotiationRequest], env: &mut AtimEnv<'_>) -> Result<AtimOutcome> {
    let mut w = AtimWindow::open(params, requests, env)?;
    while w.next_mini_slot() < params.mini_slots && !w.is_idle() {
        w.step(env)?;
    }
    Ok(w.finish(env))
}
