//! Single-channel 802.11 DCF with RTS/CTS and NAV, the comparison MAC.
//!
//! Every node shares one channel. A node decodes, senses and is disturbed
//! by transmissions from nodes within transmission range. A frame is lost
//! at a node when any other transmission it can hear overlaps it, or when
//! the node itself transmits meanwhile.

use std::collections::{HashSet, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::engine::metrics::{compute_metrics, Counters};
use crate::engine::queue::EventQueue;
use crate::engine::scenario::{build_network, Protocol, Scenario};
use crate::engine::traffic::CbrSource;
use crate::engine::{RunOptions, RunOutput};
use crate::error::{Error, Result};
use crate::mac::{AuditReport, DataPacket};
use crate::rng::{stream_rng, Stream};
use crate::spectrum::ChannelId;
use crate::time::SimTime;
use crate::topology::NodeId;
use crate::trace::{Trace, TraceRecord};

/// 802.11b-style long-preamble timing.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub rate: f64,
    pub slot: f64,
    pub sifs: f64,
    pub difs: f64,
    pub plcp: f64,
    pub rts_bytes: u32,
    pub cts_bytes: u32,
    pub ack_bytes: u32,
    pub mac_header_bytes: u32,
    pub cw_min: u32,
    pub cw_max: u32,
    pub retry_limit: u32,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            rate: 2e6,
            slot: 20e-6,
            sifs: 10e-6,
            difs: 50e-6,
            plcp: 192e-6,
            rts_bytes: 20,
            cts_bytes: 14,
            ack_bytes: 14,
            mac_header_bytes: 28,
            cw_min: 16,
            cw_max: 1024,
            retry_limit: 7,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("baseline.rate", self.rate),
            ("baseline.slot", self.slot),
            ("baseline.sifs", self.sifs),
            ("baseline.difs", self.difs),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(field, "must be positive"));
            }
        }
        if !(self.plcp.is_finite() && self.plcp >= 0.0) {
            return Err(Error::validation("baseline.plcp", "must be non-negative"));
        }
        if self.sifs >= self.difs {
            return Err(Error::validation("baseline.sifs", "must be shorter than difs"));
        }
        if self.cw_min == 0 || self.cw_max < self.cw_min {
            return Err(Error::validation("baseline.cw_min", "need 1 <= cw_min <= cw_max"));
        }
        Ok(())
    }

    fn airtime(&self, bytes: u32) -> SimTime {
        SimTime::from_secs(self.plcp + f64::from(bytes) * 8.0 / self.rate)
    }
}

/// Contention state of one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DcfState {
    pub cw: u32,
    pub backoff: u32,
    pub nav: SimTime,
    pub retry_count: u32,
}

impl DcfState {
    fn new(cw_min: u32) -> Self {
        DcfState {
            cw: cw_min,
            backoff: 0,
            nav: SimTime::ZERO,
            retry_count: 0,
        }
    }

    /// Doubles the window after a failed exchange.
    pub fn on_failure(&mut self, cw_max: u32) {
        self.retry_count += 1;
        self.cw = (self.cw * 2).min(cw_max);
    }

    pub fn on_success(&mut self, cw_min: u32) {
        self.retry_count = 0;
        self.cw = cw_min;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Rts,
    Cts,
    Data,
    Ack,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Rts => "rts",
            Kind::Cts => "cts",
            Kind::Data => "data",
            Kind::Ack => "ack",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    kind: Kind,
    src: usize,
    dst: usize,
    /// End of the reservation announced in the duration field.
    nav_end: SimTime,
    packet: Option<DataPacket>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Contend,
    WaitCts,
    WaitAck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Access {
    None,
    Difs,
    Counting(SimTime),
}

#[derive(Debug)]
struct Station {
    id: NodeId,
    neighbors: Vec<usize>,
    queue: VecDeque<(DataPacket, usize)>,
    dcf: DcfState,
    phase: Phase,
    access: Access,
    access_gen: u64,
    timer_gen: u64,
    sensed: u32,
    transmitting: bool,
    /// Frames being received: (transmission id, corrupted).
    rx: Vec<(u64, bool)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ev {
    Arrival(u32),
    TxEnd(u64),
    Send(u64),
    AccessStart(usize, u64),
    BackoffDone(usize, u64),
    Timeout(usize, u64),
    NavEnd(usize),
}

struct Dcf<'a> {
    s: &'a Scenario,
    cfg: BaselineConfig,
    st: Vec<Station>,
    /// Station indices along each flow's route.
    routes: Vec<Vec<usize>>,
    sources: Vec<CbrSource>,
    events: EventQueue<Ev>,
    rng: ChaCha8Rng,
    frames: std::collections::HashMap<u64, Frame>,
    next_tx: u64,
    next_packet: u64,
    /// (packet, station) receptions already accepted; a retransmission
    /// whose ACK was lost must not be counted or forwarded twice.
    received: HashSet<(u64, usize)>,
    counters: Counters,
    collisions: u64,
    warmup: SimTime,
    now: SimTime,
    trace: Trace,
    t_rts: SimTime,
    t_cts: SimTime,
    t_ack: SimTime,
    t_data: SimTime,
}

/// Runs the baseline on the same topology and flows the CR-MAC run of
/// this scenario would use. Primary users are ignored.
pub fn run_baseline_scenario(s: &Scenario, opts: RunOptions) -> Result<RunOutput> {
    let net = build_network(s)?;
    let g = &net.graph;
    let ids = g.node_ids();
    let mut st: Vec<Station> = Vec::with_capacity(ids.len());
    for &v in ids {
        let neighbors = g.neighbors(v)?.iter().map(|&u| g.index_of(u)).collect::<Result<Vec<_>>>()?;
        st.push(Station {
            id: v,
            neighbors,
            queue: VecDeque::new(),
            dcf: DcfState::new(s.baseline.cw_min),
            phase: Phase::Idle,
            access: Access::None,
            access_gen: 0,
            timer_gen: 0,
            sensed: 0,
            transmitting: false,
            rx: Vec::new(),
        });
    }
    let routes = net
        .flows
        .iter()
        .map(|f| f.route.iter().map(|&v| g.index_of(v)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let cfg = s.baseline;
    let mut sim = Dcf {
        s,
        cfg,
        st,
        routes,
        sources: net.flows.iter().map(|f| CbrSource::new(f, s.duration)).collect(),
        events: EventQueue::new(),
        rng: stream_rng(s.seed, s.topology_id, Stream::Backoff),
        frames: Default::default(),
        next_tx: 0,
        next_packet: 0,
        received: HashSet::new(),
        counters: Counters::default(),
        collisions: 0,
        warmup: if s.warmup_cut { SimTime::from_secs(s.warmup) } else { SimTime::ZERO },
        now: SimTime::ZERO,
        trace: if opts.trace { Trace::enabled() } else { Trace::disabled() },
        t_rts: cfg.airtime(cfg.rts_bytes),
        t_cts: cfg.airtime(cfg.cts_bytes),
        t_ack: cfg.airtime(cfg.ack_bytes),
        t_data: cfg.airtime(s.traffic.packet_bytes + cfg.mac_header_bytes),
    };
    sim.run();
    sim.finish()
}

impl Dcf<'_> {
    fn sifs(&self) -> SimTime {
        SimTime::from_secs(self.cfg.sifs)
    }

    fn slot(&self) -> SimTime {
        SimTime::from_secs(self.cfg.slot)
    }

    fn run(&mut self) {
        let end = SimTime::from_secs(self.s.duration);
        for i in 0..self.sources.len() {
            if let Some(a) = self.sources[i].next() {
                self.events.push(a.time, Ev::Arrival(a.flow));
            }
        }
        while let Some(t) = self.events.peek_time() {
            if t >= end {
                break;
            }
            let (t, ev) = self.events.pop().expect("peeked");
            self.now = t;
            match ev {
                Ev::Arrival(f) => self.arrival(f),
                Ev::Send(id) => self.start_tx(id),
                Ev::TxEnd(id) => self.end_tx(id),
                Ev::AccessStart(i, g) => {
                    if self.st[i].access_gen == g && self.st[i].access == Access::Difs {
                        self.st[i].access = Access::Counting(t);
                        let done = t + self.slot() * u64::from(self.st[i].dcf.backoff);
                        self.events.push(done, Ev::BackoffDone(i, g));
                    }
                }
                Ev::BackoffDone(i, g) => {
                    if self.st[i].access_gen == g && matches!(self.st[i].access, Access::Counting(_)) {
                        self.st[i].access = Access::None;
                        self.st[i].dcf.backoff = 0;
                        self.send_rts(i);
                    }
                }
                Ev::Timeout(i, g) => {
                    if self.st[i].timer_gen == g && matches!(self.st[i].phase, Phase::WaitCts | Phase::WaitAck) {
                        self.exchange_failed(i);
                    }
                }
                Ev::NavEnd(i) => self.try_access(i),
            }
        }
    }

    fn arrival(&mut self, flow: u32) {
        let src = self.routes[flow as usize][0];
        let measured = self.now >= self.warmup;
        let p = DataPacket {
            id: self.next_packet,
            flow,
            generated: self.now,
            bits: self.s.traffic.packet_bits(),
            retry_count: 0,
            measured,
        };
        self.next_packet += 1;
        self.counters.total_generated += 1;
        if measured {
            self.counters.generated += 1;
        }
        self.enqueue(src, p);
        if let Some(a) = self.sources[flow as usize].next() {
            self.events.push(a.time, Ev::Arrival(a.flow));
        }
    }

    /// Queues `p` at station `i` toward its next hop.
    fn enqueue(&mut self, i: usize, p: DataPacket) {
        let route = &self.routes[p.flow as usize];
        let pos = route.iter().position(|&v| v == i).expect("packet held on its route");
        let next = route[pos + 1];
        let p = DataPacket { retry_count: 0, ..p };
        let held = self.st[i].queue.iter().filter(|e| e.1 == next).count();
        if held >= self.s.mac.queue_limit {
            self.count_drop(i, &p);
            return;
        }
        self.st[i].queue.push_back((p, next));
        if self.st[i].phase == Phase::Idle {
            self.begin_contention(i);
        }
    }

    fn count_drop(&mut self, i: usize, p: &DataPacket) {
        self.counters.total_dropped += 1;
        if p.measured {
            self.counters.dropped += 1;
        }
        let node = self.st[i].id;
        let t = self.now;
        self.trace.emit(|| TraceRecord::new(t, node, "drop").ch(ChannelId::CONTROL).with("packet", p.id));
    }

    fn begin_contention(&mut self, i: usize) {
        let cw = self.st[i].dcf.cw;
        self.st[i].dcf.backoff = self.rng.gen_range(0..cw);
        self.st[i].phase = Phase::Contend;
        self.st[i].access = Access::None;
        self.try_access(i);
    }

    fn medium_idle(&self, i: usize) -> bool {
        let s = &self.st[i];
        s.sensed == 0 && !s.transmitting && self.now >= s.dcf.nav
    }

    fn try_access(&mut self, i: usize) {
        if self.st[i].phase == Phase::Contend && self.st[i].access == Access::None && self.medium_idle(i) {
            self.st[i].access = Access::Difs;
            let g = self.st[i].access_gen;
            self.events.push(self.now + SimTime::from_secs(self.cfg.difs), Ev::AccessStart(i, g));
        }
    }

    /// Medium went busy at `i`: stop the DIFS wait or freeze the countdown.
    fn freeze(&mut self, i: usize) {
        let slot = self.slot().nanos();
        let s = &mut self.st[i];
        match s.access {
            Access::None => return,
            Access::Difs => {}
            Access::Counting(start) => {
                let elapsed = ((self.now - start).nanos() / slot) as u32;
                s.dcf.backoff -= elapsed.min(s.dcf.backoff);
            }
        }
        s.access = Access::None;
        s.access_gen += 1;
    }

    fn send_rts(&mut self, i: usize) {
        let Some(&(_, dst)) = self.st[i].queue.front() else {
            self.st[i].phase = Phase::Idle;
            return;
        };
        let sifs = self.sifs();
        let nav_end = self.now + self.t_rts + sifs * 3 + self.t_cts + self.t_data + self.t_ack;
        self.st[i].phase = Phase::WaitCts;
        self.st[i].timer_gen += 1;
        let g = self.st[i].timer_gen;
        let deadline = self.now + self.t_rts + sifs + self.t_cts + self.slot();
        self.events.push(deadline, Ev::Timeout(i, g));
        let id = self.new_frame(Frame {
            kind: Kind::Rts,
            src: i,
            dst,
            nav_end,
            packet: None,
        });
        self.start_tx(id);
    }

    fn new_frame(&mut self, f: Frame) -> u64 {
        let id = self.next_tx;
        self.next_tx += 1;
        self.frames.insert(id, f);
        id
    }

    fn respond(&mut self, f: Frame) {
        let id = self.new_frame(f);
        self.events.push(self.now + self.sifs(), Ev::Send(id));
    }

    fn airtime(&self, k: Kind) -> SimTime {
        match k {
            Kind::Rts => self.t_rts,
            Kind::Cts => self.t_cts,
            Kind::Data => self.t_data,
            Kind::Ack => self.t_ack,
        }
    }

    fn start_tx(&mut self, id: u64) {
        let f = self.frames[&id];
        let i = f.src;
        if self.st[i].transmitting {
            self.frames.remove(&id);
            if f.kind == Kind::Data {
                self.exchange_failed(i);
            }
            return;
        }
        let t = self.now;
        let (node, peer) = (self.st[i].id, self.st[f.dst].id);
        let packet = f.packet.map(|p| p.id);
        self.trace.emit(|| {
            let r = TraceRecord::new(t, node, f.kind.name()).ch(ChannelId::CONTROL).peer(peer);
            match packet {
                Some(p) => r.with("packet", p),
                None => r,
            }
        });
        self.freeze(i);
        self.st[i].transmitting = true;
        for r in self.st[i].rx.iter_mut() {
            r.1 = true;
        }
        for k in 0..self.st[i].neighbors.len() {
            let j = self.st[i].neighbors[k];
            let sj = &mut self.st[j];
            let clean = !sj.transmitting && sj.rx.is_empty();
            if !clean {
                for r in sj.rx.iter_mut() {
                    r.1 = true;
                }
            }
            sj.rx.push((id, !clean));
            sj.sensed += 1;
            if sj.sensed == 1 {
                self.freeze(j);
            }
        }
        self.events.push(t + self.airtime(f.kind), Ev::TxEnd(id));
    }

    fn end_tx(&mut self, id: u64) {
        let f = self.frames.remove(&id).expect("frame in flight");
        let i = f.src;
        self.st[i].transmitting = false;
        let neighbors = self.st[i].neighbors.clone();
        let mut decoded = Vec::new();
        for &j in &neighbors {
            let sj = &mut self.st[j];
            sj.sensed -= 1;
            let pos = sj.rx.iter().position(|r| r.0 == id).expect("reception registered");
            let (_, corrupted) = sj.rx.swap_remove(pos);
            if corrupted {
                if j == f.dst {
                    self.collisions += 1;
                }
            } else {
                decoded.push(j);
            }
        }
        for j in decoded {
            self.receive(j, &f);
        }
        self.after_tx(i, &f);
        for &j in &neighbors {
            self.try_access(j);
        }
        self.try_access(i);
    }

    fn after_tx(&mut self, i: usize, f: &Frame) {
        let sifs = self.sifs();
        match f.kind {
            Kind::Data => {
                self.st[i].phase = Phase::WaitAck;
                self.st[i].timer_gen += 1;
                let g = self.st[i].timer_gen;
                self.events.push(self.now + sifs + self.t_ack + self.slot(), Ev::Timeout(i, g));
            }
            Kind::Rts | Kind::Cts | Kind::Ack => {}
        }
    }

    fn receive(&mut self, j: usize, f: &Frame) {
        let sifs = self.sifs();
        if f.dst != j {
            if matches!(f.kind, Kind::Rts | Kind::Cts) && f.nav_end > self.st[j].dcf.nav {
                self.st[j].dcf.nav = f.nav_end;
                self.freeze(j);
                self.events.push(f.nav_end, Ev::NavEnd(j));
            }
            return;
        }
        match f.kind {
            Kind::Rts => {
                if self.now >= self.st[j].dcf.nav && !matches!(self.st[j].phase, Phase::WaitCts | Phase::WaitAck) {
                    let nav_end = self.now + sifs * 2 + self.t_cts + self.t_data + self.t_ack;
                    self.respond(Frame {
                        kind: Kind::Cts,
                        src: j,
                        dst: f.src,
                        nav_end,
                        packet: None,
                    });
                }
            }
            Kind::Cts => {
                if self.st[j].phase == Phase::WaitCts {
                    self.st[j].timer_gen += 1;
                    let Some(&(packet, dst)) = self.st[j].queue.front() else {
                        return;
                    };
                    self.st[j].phase = Phase::WaitAck;
                    let nav_end = self.now + sifs * 2 + self.t_data + self.t_ack;
                    self.respond(Frame {
                        kind: Kind::Data,
                        src: j,
                        dst,
                        nav_end,
                        packet: Some(packet),
                    });
                }
            }
            Kind::Data => {
                let p = f.packet.expect("data frames carry a packet");
                let last = *self.routes[p.flow as usize].last().expect("routes are non-empty");
                // A retransmission after a lost ACK is acknowledged again but
                // not counted or forwarded twice.
                let fresh = self.received.insert((p.id, j));
                if fresh && j != last {
                    self.enqueue(j, p);
                } else if fresh {
                    self.counters.total_delivered += 1;
                    if p.measured {
                        self.counters.delivered += 1;
                        self.counters.delivered_bits += p.bits;
                        self.counters.delay_sum += (self.now - p.generated).as_secs();
                        *self.counters.channel_bits.entry(ChannelId::CONTROL).or_default() += p.bits;
                    }
                }
                self.respond(Frame {
                    kind: Kind::Ack,
                    src: j,
                    dst: f.src,
                    nav_end: self.now + sifs + self.t_ack,
                    packet: None,
                });
            }
            Kind::Ack => {
                if self.st[j].phase == Phase::WaitAck {
                    self.st[j].timer_gen += 1;
                    self.st[j].queue.pop_front();
                    self.st[j].dcf.on_success(self.cfg.cw_min);
                    self.next_packet_or_idle(j);
                }
            }
        }
    }

    fn exchange_failed(&mut self, i: usize) {
        self.st[i].dcf.on_failure(self.cfg.cw_max);
        if self.st[i].dcf.retry_count > self.cfg.retry_limit {
            if let Some((p, next)) = self.st[i].queue.pop_front() {
                // The next hop may hold it already if only the ACK was lost.
                if !self.received.contains(&(p.id, next)) {
                    self.count_drop(i, &p);
                }
            }
            self.st[i].dcf.on_success(self.cfg.cw_min);
            self.next_packet_or_idle(i);
        } else {
            self.begin_contention(i);
        }
    }

    fn next_packet_or_idle(&mut self, i: usize) {
        if self.st[i].queue.is_empty() {
            self.st[i].phase = Phase::Idle;
            self.st[i].access = Access::None;
            self.st[i].access_gen += 1;
        } else {
            self.begin_contention(i);
        }
    }

    fn finish(mut self) -> Result<RunOutput> {
        for s in &self.st {
            for (p, next) in &s.queue {
                if self.received.contains(&(p.id, *next)) {
                    continue;
                }
                self.counters.total_queued_at_end += 1;
                if p.measured {
                    self.counters.queued_at_end += 1;
                }
            }
        }
        let metrics = compute_metrics(&self.counters, self.s.measured_window(), None)?;
        Ok(RunOutput {
            protocol: Protocol::Baseline,
            metrics,
            counters: self.counters,
            audit: AuditReport {
                data_collisions: self.collisions,
                ..AuditReport::default()
            },
            frames: Vec::new(),
            trace: self.trace.into_records(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_airtimes() {
        let c = BaselineConfig::default();
        assert_eq!(c.airtime(c.rts_bytes), SimTime::from_micros(272));
        assert_eq!(c.airtime(c.cts_bytes), SimTime::from_micros(248));
        assert_eq!(c.airtime(1000 + c.mac_header_bytes), SimTime::from_micros(4304));
    }

    #[test]
    fn window_doubles_and_caps() {
        let mut d = DcfState::new(16);
        for _ in 0..10 {
            d.on_failure(1024);
        }
        assert_eq!(d.cw, 1024);
        d.on_success(16);
        assert_eq!(d.cw, 16);
        assert_eq!(d.retry_count, 0);
    }
}
