//! The CR-MAC event loop.

use rand_chacha::ChaCha8Rng;

use crate::engine::metrics::{compute_metrics, Counters};
use crate::engine::queue::EventQueue;
use crate::engine::scenario::{build_network, Protocol, Scenario};
use crate::engine::traffic::CbrSource;
use crate::engine::{FrameLog, RunOptions, RunOutput};
use crate::error::Result;
use crate::mac::atim::{AtimEnv, AtimParams, AtimWindow, ControlRegions, NegotiationRequest, RngBackoff};
use crate::mac::comm::{allocate_packets, comm_slot_run, record_doze, CommEnv, SlotReport};
use crate::mac::{audit_schedule, AuditReport, DataPacket, LinkQueue, NodeMacState};
use crate::rng::{stream_rng, Stream};
use crate::schedule::FrameSchedule;
use crate::segments::{RateRequirement, SelectionRules};
use crate::spectrum::{ChannelTable, PuSnapshot, SensingReport, SpectrumModel};
use crate::time::SimTime;
use crate::topology::{CommunicationGraph, NodeId};
use crate::trace::{Trace, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    FrameStart(u64),
    AtimMiniSlot,
    SlotStart(u16),
    PacketArrival(u32),
    StatsSnapshot,
}

struct Sim<'a> {
    s: &'a Scenario,
    graph: CommunicationGraph,
    regions: ControlRegions,
    spectrum: SpectrumModel,
    /// Route of each flow, source first.
    routes: Vec<Vec<NodeId>>,
    sources: Vec<CbrSource>,
    nodes: Vec<NodeMacState>,
    events: EventQueue<Event>,
    backoff: RngBackoff<ChaCha8Rng>,
    counters: Counters,
    audit: AuditReport,
    trace: Trace,
    opts: RunOptions,
    frames: Vec<FrameLog>,
    warmup: SimTime,
    next_packet: u64,
    frame: u64,
    frame_start: SimTime,
    frame_pu: PuSnapshot,
    pu_during: Vec<PuSnapshot>,
    window: Option<AtimWindow>,
    schedule: FrameSchedule,
    atim_collisions: u32,
    data_failures: u32,
}

pub fn run(s: &Scenario, opts: RunOptions) -> Result<RunOutput> {
    let net = build_network(s)?;
    let table = ChannelTable::from_config(&s.channels)?;
    let spectrum = SpectrumModel::from_config(&s.pu, table, (s.area_width, s.area_height), s.seed, s.topology_id)?;
    let num_channels = spectrum.table.channels().len();
    let mut nodes: Vec<NodeMacState> = net
        .graph
        .node_ids()
        .iter()
        .map(|&v| NodeMacState::new(v, num_channels, s.frame.num_slots))
        .collect();
    for f in &net.flows {
        for hop in f.hops() {
            let st = &mut nodes[net.graph.index_of(hop.tx)?];
            match st.queue_to(hop.rx) {
                Some(q) => q.rate += f.session_rate,
                None => st.queues.push(LinkQueue::new(f.id, hop.rx, f.session_rate)),
            }
        }
    }

    let mut sim = Sim {
        s,
        regions: ControlRegions::new(&net.graph),
        graph: net.graph,
        spectrum,
        sources: net.flows.iter().map(|f| CbrSource::new(f, s.duration)).collect(),
        routes: net.flows.iter().map(|f| f.route.clone()).collect(),
        nodes,
        events: EventQueue::new(),
        backoff: RngBackoff(stream_rng(s.seed, s.topology_id, Stream::Backoff)),
        counters: Counters::default(),
        audit: AuditReport::default(),
        trace: if opts.trace { Trace::enabled() } else { Trace::disabled() },
        opts,
        frames: Vec::new(),
        warmup: if s.warmup_cut { SimTime::from_secs(s.warmup) } else { SimTime::ZERO },
        next_packet: 0,
        frame: 0,
        frame_start: SimTime::ZERO,
        frame_pu: PuSnapshot { on: Vec::new() },
        pu_during: Vec::new(),
        window: None,
        schedule: FrameSchedule::new(0),
        atim_collisions: 0,
        data_failures: 0,
    };
    sim.run()?;
    sim.finish()
}

impl Sim<'_> {
    fn run(&mut self) -> Result<()> {
        let end = SimTime::from_secs(self.s.duration);
        self.events.push(SimTime::ZERO, Event::FrameStart(0));
        for i in 0..self.sources.len() {
            if let Some(a) = self.sources[i].next() {
                self.events.push(a.time, Event::PacketArrival(a.flow));
            }
        }
        if self.opts.trace {
            self.events.push(SimTime::from_secs(self.s.stats_interval), Event::StatsSnapshot);
        }
        while let Some(t) = self.events.peek_time() {
            if t >= end {
                break;
            }
            let (t, ev) = self.events.pop().expect("peeked");
            match ev {
                Event::FrameStart(k) => self.frame_start(t, k)?,
                Event::AtimMiniSlot => self.mini_slot()?,
                Event::SlotStart(j) => self.slot(j)?,
                Event::PacketArrival(f) => self.arrival(t, f),
                Event::StatsSnapshot => {
                    let (g, d) = (self.counters.total_generated, self.counters.total_delivered);
                    self.trace.emit(|| {
                        TraceRecord::new(t, crate::topology::NodeId(u32::MAX), "stats")
                            .with("generated", g)
                            .with("delivered", d)
                    });
                    self.events.push(t + SimTime::from_secs(self.s.stats_interval), Event::StatsSnapshot);
                }
            }
        }
        Ok(())
    }

    fn arrival(&mut self, t: SimTime, flow: u32) {
        let fi = flow as usize;
        let measured = t >= self.warmup;
        let p = DataPacket {
            id: self.next_packet,
            flow,
            generated: t,
            bits: self.s.traffic.packet_bits(),
            retry_count: 0,
            measured,
        };
        self.next_packet += 1;
        self.counters.total_generated += 1;
        if measured {
            self.counters.generated += 1;
        }
        let src = self.routes[fi][0];
        self.forward(t, src, p);
        if let Some(a) = self.sources[fi].next() {
            self.events.push(a.time, Event::PacketArrival(a.flow));
        }
    }

    /// Queues `p` at `at` toward its next hop, tail-dropping when full.
    fn forward(&mut self, t: SimTime, at: NodeId, p: DataPacket) {
        let route = &self.routes[p.flow as usize];
        let pos = route.iter().position(|&v| v == at).expect("packet held on its route");
        let next = route[pos + 1];
        let i = self.graph.index_of(at).expect("route nodes are in the graph");
        let q = self.nodes[i].queue_to(next).expect("queue registered for every hop");
        let p = DataPacket { retry_count: 0, ..p };
        if !q.enqueue(p, self.s.mac.queue_limit) {
            self.count_drop(&p);
            self.trace.emit(|| TraceRecord::new(t, at, "drop").with("packet", p.id).with("cause", "queue"));
        }
    }

    fn count_drop(&mut self, p: &DataPacket) {
        self.counters.total_dropped += 1;
        if p.measured {
            self.counters.dropped += 1;
        }
    }

    fn frame_start(&mut self, t: SimTime, k: u64) -> Result<()> {
        let s = self.s;
        let cfg = &s.frame;
        self.frame = k;
        self.frame_start = t;
        self.frame_pu = self.spectrum.snapshot(t.as_secs());
        self.pu_during = if s.pu.midframe_toggle {
            (0..cfg.num_slots)
                .map(|j| self.spectrum.snapshot((t + cfg.slot_offset(j)).as_secs()))
                .collect()
        } else {
            vec![self.frame_pu.clone()]
        };
        let num_channels = self.spectrum.table.channels().len();
        let all = self.spectrum.table.all_channel_ids();
        for st in &mut self.nodes {
            let report = if s.mac.sensing {
                let pos = self.graph.position(st.node)?;
                self.spectrum.sense(st.node, &pos, k, &self.frame_pu)
            } else {
                SensingReport {
                    node: st.node,
                    frame: k,
                    available: all.clone(),
                }
            };
            if report.available.len() < num_channels {
                let busy = num_channels - report.available.len();
                let node = st.node;
                self.trace.emit(|| TraceRecord::new(t, node, "sense").frame(k).with("busy_channels", busy));
            }
            st.begin_frame(report, num_channels, cfg.num_slots);
        }

        let per_packet = s.demand_per_packet();
        let requests: Vec<NegotiationRequest> = self
            .nodes
            .iter()
            .flat_map(|st| {
                st.queues.iter().filter(|f| f.eligible(k)).map(move |f| NegotiationRequest {
                    initiator: st.node,
                    responder: f.dst,
                    demand: RateRequirement::new(f.flow, f.demand(per_packet)),
                })
            })
            .collect();

        let params = AtimParams {
            frame: k,
            beacon_start: t + SimTime::from_secs(cfg.sensing_dur),
            start: t + cfg.mini_slot_offset(0),
            mini_slot: SimTime::from_secs(cfg.mini_slot_secs()),
            mini_slots: cfg.mini_slots,
            contention_window: cfg.contention_window,
            max_negotiations: s.mac.max_negotiations_per_frame,
            overhear: s.mac.overhear,
            rules: SelectionRules {
                num_slots: cfg.num_slots,
                literal_condition2: s.mac.literal_condition2,
            },
        };
        let mut env = AtimEnv {
            graph: &self.graph,
            regions: &self.regions,
            channels: &self.spectrum.table,
            nodes: &mut self.nodes,
            backoff: &mut self.backoff,
            trace: &mut self.trace,
        };
        let window = AtimWindow::open(params, &requests, &mut env)?;
        if !window.is_idle() {
            self.events.push(params.start, Event::AtimMiniSlot);
        }
        self.window = Some(window);
        self.events.push(t + cfg.slot_offset(0), Event::SlotStart(0));
        self.events.push(t + cfg.frame_duration(), Event::FrameStart(k + 1));
        Ok(())
    }

    fn mini_slot(&mut self) -> Result<()> {
        let Some(window) = self.window.as_mut() else {
            return Ok(());
        };
        let mut env = AtimEnv {
            graph: &self.graph,
            regions: &self.regions,
            channels: &self.spectrum.table,
            nodes: &mut self.nodes,
            backoff: &mut self.backoff,
            trace: &mut self.trace,
        };
        window.step(&mut env)?;
        let m = window.next_mini_slot();
        if m < self.s.frame.mini_slots && !window.is_idle() {
            let t = self.frame_start + self.s.frame.mini_slot_offset(0) + SimTime::from_secs(self.s.frame.mini_slot_secs()) * m as u64;
            self.events.push(t, Event::AtimMiniSlot);
        }
        Ok(())
    }

    fn close_window(&mut self) -> Result<()> {
        let Some(window) = self.window.take() else {
            return Ok(());
        };
        let mut env = AtimEnv {
            graph: &self.graph,
            regions: &self.regions,
            channels: &self.spectrum.table,
            nodes: &mut self.nodes,
            backoff: &mut self.backoff,
            trace: &mut self.trace,
        };
        let outcome = window.finish(&mut env);
        self.atim_collisions = outcome.collisions;
        self.data_failures = 0;
        self.schedule = outcome.schedule;
        allocate_packets(&mut self.schedule, &self.nodes, &self.graph, &self.spectrum.table)?;
        self.audit.record(audit_schedule(&self.schedule, &self.graph));
        Ok(())
    }

    fn slot(&mut self, j: u16) -> Result<()> {
        if j == 0 {
            self.close_window()?;
        }
        let cfg = &self.s.frame;
        let pu = &self.pu_during[usize::from(j).min(self.pu_during.len() - 1)];
        let mut env = CommEnv {
            graph: &self.graph,
            spectrum: &self.spectrum,
            frame_pu: &self.frame_pu,
            frame_cfg: cfg,
            mac: &self.s.mac,
            frame: self.frame,
            frame_start: self.frame_start,
            nodes: &mut self.nodes,
            backoff: &mut self.backoff,
            trace: &mut self.trace,
        };
        let report = comm_slot_run(&self.schedule, j, pu, &mut env)?;
        let last = usize::from(j) + 1 == cfg.num_slots;
        if last {
            record_doze(&self.schedule, &mut env);
        }
        self.tally(report);
        if last {
            self.counters.node_slots += (self.nodes.len() * cfg.num_slots) as u64;
            if self.opts.record_frames {
                self.frames.push(FrameLog {
                    frame: self.frame,
                    schedule: self.schedule.clone(),
                    atim_collisions: self.atim_collisions,
                    data_failures: self.data_failures,
                });
            }
        } else {
            self.events.push(self.frame_start + cfg.slot_offset(usize::from(j) + 1), Event::SlotStart(j + 1));
        }
        Ok(())
    }

    fn tally(&mut self, r: SlotReport) {
        self.audit.pu_violations += u64::from(r.pu_violations);
        self.audit.data_collisions += u64::from(r.failed);
        self.data_failures += r.failed;
        for d in &r.deliveries {
            if self.routes[d.packet.flow as usize].last() != Some(&d.rx) {
                self.forward(d.at, d.rx, d.packet);
                continue;
            }
            self.counters.total_delivered += 1;
            if d.packet.measured {
                self.counters.delivered += 1;
                self.counters.delivered_bits += d.packet.bits;
                self.counters.delay_sum += (d.at - d.packet.generated).as_secs();
                *self.counters.channel_bits.entry(d.channel).or_default() += d.packet.bits;
            }
        }
        for p in &r.dropped {
            self.count_drop(p);
        }
    }

    fn finish(mut self) -> Result<RunOutput> {
        for st in &self.nodes {
            for q in &st.queues {
                for p in &q.queue {
                    self.counters.total_queued_at_end += 1;
                    if p.measured {
                        self.counters.queued_at_end += 1;
                    }
                }
            }
        }
        self.counters.doze_slots = self.nodes.iter().map(|n| n.doze_slots).sum();
        let metrics = compute_metrics(&self.counters, self.s.measured_window(), None)?;
        Ok(RunOutput {
            protocol: Protocol::Crmac,
            metrics,
            counters: self.counters,
            audit: self.audit,
            frames: self.frames,
            trace: self.trace.into_records(),
        })
    }
}
