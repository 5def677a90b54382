//! The TDMA communication window.
//!
//! Reception follows the protocol interference model: a DATA/ACK exchange
//! on segment `(c, t)` fails when another exchange in slot `t` shares a
//! node, when a conflicting link is active on `c`, or when a PU is on `c`
//! at either endpoint. With default flags only the first two can be caused
//! by a broken schedule, and the schedule audit rules both out.

use crate::error::Result;
use crate::mac::{BackoffSource, DataPacket, FrameConfig, MacConfig, NodeMacState};
use crate::schedule::{FrameSchedule, ScheduleEntry};
use crate::spectrum::{ChannelId, ChannelTable, PuSnapshot, SpectrumModel};
use crate::time::SimTime;
use crate::topology::{links_conflict, CommunicationGraph, NodeId};
use crate::trace::{Trace, TraceRecord};

pub struct CommEnv<'a> {
    pub graph: &'a CommunicationGraph,
    pub spectrum: &'a SpectrumModel,
    /// PU phases at frame start, the reference for the protection audit.
    pub frame_pu: &'a PuSnapshot,
    pub frame_cfg: &'a FrameConfig,
    pub mac: &'a MacConfig,
    pub frame: u64,
    pub frame_start: SimTime,
    /// Indexed like `graph.node_ids()`.
    pub nodes: &'a mut [NodeMacState],
    pub backoff: &'a mut dyn BackoffSource,
    pub trace: &'a mut Trace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delivery {
    pub packet: DataPacket,
    /// The hop's receiver, which may be a relay.
    pub rx: NodeId,
    pub at: SimTime,
    pub channel: ChannelId,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlotReport {
    pub slot: u16,
    pub deliveries: Vec<Delivery>,
    pub dropped: Vec<DataPacket>,
    /// DATA packets put on the air.
    pub sent: u32,
    /// Exchanges whose ACK never came back.
    pub failed: u32,
    pub pu_violations: u32,
}

/// Fixes how many packets each entry carries: the channel's packets per
/// slot, capped by what the link has queued now. Entries are visited in
/// slot order so earlier slots fill first.
pub fn allocate_packets(schedule: &mut FrameSchedule, nodes: &[NodeMacState], g: &CommunicationGraph, channels: &ChannelTable) -> Result<()> {
    schedule.entries.sort_by_key(|e| (e.segment.slot, e.segment.channel, e.link));
    let mut left: Vec<Vec<usize>> = nodes.iter().map(|n| n.queues.iter().map(|f| f.queue.len()).collect()).collect();
    for e in &mut schedule.entries {
        let i = g.index_of(e.link.tx)?;
        let Some(fi) = nodes[i].queues.iter().position(|f| f.dst == e.link.rx) else {
            e.packets = 0;
            continue;
        };
        let n = (channels.packets_per_slot(e.segment.channel) as usize).min(left[i][fi]);
        left[i][fi] -= n;
        e.packets = n as u32;
    }
    Ok(())
}

/// Runs slot `slot` of the communication window. `pu_now` gives the PU
/// phases while the slot is on the air.
pub fn comm_slot_run(schedule: &FrameSchedule, slot: u16, pu_now: &PuSnapshot, env: &mut CommEnv<'_>) -> Result<SlotReport> {
    let mut report = SlotReport {
        slot,
        ..SlotReport::default()
    };
    let slot_start = env.frame_start + env.frame_cfg.slot_offset(usize::from(slot));
    let mut active: Vec<(ScheduleEntry, usize, usize, usize)> = Vec::new();
    for e in schedule.entries.iter().filter(|e| e.segment.slot == slot && e.packets > 0) {
        let i = env.graph.index_of(e.link.tx)?;
        let Some(fi) = env.nodes[i].queues.iter().position(|f| f.dst == e.link.rx) else {
            continue;
        };
        let f = &env.nodes[i].queues[fi];
        let n = (e.packets as usize).min(f.queue.len());
        if f.halted || n == 0 {
            continue;
        }
        active.push((*e, i, fi, n));
    }

    for (k, &(e, i, fi, n)) in active.iter().enumerate() {
        let ch = e.segment.channel;
        let tx_pos = env.graph.position(e.link.tx)?;
        let rx_pos = env.graph.position(e.link.rx)?;
        let (frame, t) = (env.frame, slot_start);
        if env.spectrum.busy_in(env.frame_pu, ch, &tx_pos) || env.spectrum.busy_in(env.frame_pu, ch, &rx_pos) {
            report.pu_violations += 1;
        }
        let clash = active.iter().enumerate().any(|(k2, &(o, _, _, _))| {
            k2 != k && (o.link.shares_node(&e.link) || (o.segment.channel == ch && links_conflict(e.link, o.link, true, env.graph)))
        });
        let pu_hit = env.spectrum.busy_in(pu_now, ch, &tx_pos) || env.spectrum.busy_in(pu_now, ch, &rx_pos);
        report.sent += n as u32;
        env.trace.emit(|| {
            TraceRecord::new(t, e.link.tx, "data")
                .frame(frame)
                .ch(ch)
                .slot(slot)
                .peer(e.link.rx)
                .with("packets", n)
        });

        let pps = env.spectrum.table.packets_per_slot(ch).max(1) as f64;
        let queue = &mut env.nodes[i].queues[fi];
        if !clash && !pu_hit {
            for j in 0..n {
                let packet = queue.queue.pop_front().expect("n bounded by queue length");
                let offset = env.frame_cfg.d_guard + (j + 1) as f64 * env.frame_cfg.d_data / pps;
                report.deliveries.push(Delivery {
                    packet,
                    rx: e.link.rx,
                    at: t + SimTime::from_secs(offset),
                    channel: ch,
                });
            }
            env.trace.emit(|| {
                TraceRecord::new(t, e.link.rx, "ack")
                    .frame(frame)
                    .ch(ch)
                    .slot(slot)
                    .peer(e.link.tx)
                    .with("packets", n)
            });
        } else {
            report.failed += 1;
            let d = env.backoff.draw(e.link.tx, env.mac.retry_backoff_max + 1);
            let dropped = queue.missed_ack(n, frame, d, env.mac.retry_limit);
            let cause = if clash { "collision" } else { "pu" };
            env.trace.emit(|| {
                TraceRecord::new(t, e.link.tx, "ack-missed")
                    .frame(frame)
                    .ch(ch)
                    .slot(slot)
                    .peer(e.link.rx)
                    .with("cause", cause)
                    .with("backoff", d)
            });
            for p in &dropped {
                env.trace.emit(|| {
                    TraceRecord::new(t, e.link.tx, "drop")
                        .frame(frame)
                        .slot(slot)
                        .with("packet", p.id)
                        .with("retries", p.retry_count)
                });
            }
            report.dropped.extend(dropped);
        }
    }
    Ok(report)
}

/// Charges every node the slots it is not scheduled in.
pub fn record_doze(schedule: &FrameSchedule, env: &mut CommEnv<'_>) {
    let slots = env.frame_cfg.num_slots as u64;
    let t = env.frame_start + env.frame_cfg.slot_offset(0);
    for st in env.nodes.iter_mut() {
        let busy = schedule.busy_slots(st.node).len() as u64;
        let doze = slots - busy;
        st.doze_slots += doze;
        let (node, frame) = (st.node, env.frame);
        env.trace.emit(|| TraceRecord::new(t, node, "doze").frame(frame).with("slots", doze));
    }
}

/// Runs every slot of the window plus doze accounting. `pu_during` holds
/// one snapshot per slot, or a single snapshot for the whole window.
pub fn comm_window_run(schedule: &FrameSchedule, pu_during: &[PuSnapshot], env: &mut CommEnv<'_>) -> Result<Vec<SlotReport>> {
    let mut out = Vec::with_capacity(env.frame_cfg.num_slots);
    for j in 0..env.frame_cfg.num_slots {
        let pu = &pu_during[j.min(pu_during.len() - 1)];
        out.push(comm_slot_run(schedule, j as u16, pu, env)?);
    }
    record_doze(schedule, env);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::mac::{LinkQueue, RngBackoff};
    use crate::segments::SegmentId;
    use crate::spectrum::SensingReport;
    use crate::topology::{build_communication_graph, Link, NodeId, Position, RadioProfile};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Setup {
        graph: CommunicationGraph,
        spectrum: SpectrumModel,
        nodes: Vec<NodeMacState>,
        frame_cfg: FrameConfig,
        mac: MacConfig,
    }

    fn setup(xs: &[f64], queued: usize) -> Setup {
        let table = ChannelTable::default();
        let all = table.all_channel_ids();
        let placed: Vec<_> = xs.iter().enumerate().map(|(i, &x)| (NodeId(i as u32), Position::new(x, 0.0))).collect();
        let chans: BTreeMap<_, _> = placed.iter().map(|(v, _)| (*v, all.clone())).collect();
        let graph = build_communication_graph(&placed, RadioProfile::default(), &chans).unwrap();
        let nc = table.channels().len();
        let mut nodes: Vec<NodeMacState> = placed
            .iter()
            .map(|&(v, _)| {
                let mut s = NodeMacState::new(v, nc, 20);
                s.begin_frame(
                    SensingReport {
                        node: v,
                        frame: 0,
                        available: all.clone(),
                    },
                    nc,
                    20,
                );
                s
            })
            .collect();
        let mut f = LinkQueue::new(0, NodeId(1), 1e6);
        for id in 0..queued as u64 {
            f.enqueue(
                DataPacket {
                    id,
                    flow: 0,
                    generated: SimTime::ZERO,
                    bits: 8000,
                    retry_count: 0,
                    measured: true,
                },
                50,
            );
        }
        nodes[0].queues.push(f);
        Setup {
            graph,
            spectrum: SpectrumModel::new(table, Vec::new()),
            nodes,
            frame_cfg: FrameConfig::default(),
            mac: MacConfig::default(),
        }
    }

    fn run(s: &mut Setup, schedule: &mut FrameSchedule) -> Vec<SlotReport> {
        allocate_packets(schedule, &s.nodes, &s.graph, &s.spectrum.table).unwrap();
        let pu = PuSnapshot { on: Vec::new() };
        let mut backoff = RngBackoff(ChaCha8Rng::seed_from_u64(1));
        let mut trace = Trace::disabled();
        let mut env = CommEnv {
            graph: &s.graph,
            spectrum: &s.spectrum,
            frame_pu: &pu,
            frame_cfg: &s.frame_cfg,
            mac: &s.mac,
            frame: 0,
            frame_start: SimTime::ZERO,
            nodes: &mut s.nodes,
            backoff: &mut backoff,
            trace: &mut trace,
        };
        comm_window_run(schedule, std::slice::from_ref(&pu), &mut env).unwrap()
    }

    fn sched(entries: &[(u32, u32, u8, u16)]) -> FrameSchedule {
        FrameSchedule {
            frame: 0,
            entries: entries
                .iter()
                .map(|&(a, b, c, t)| ScheduleEntry {
                    link: Link::new(NodeId(a), NodeId(b)),
                    segment: SegmentId::new(c, t),
                    packets: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn fast_channel_carries_five() {
        let mut s = setup(&[0.0, 100.0], 8);
        let reports = run(&mut s, &mut sched(&[(0, 1, 8, 7)]));
        assert_eq!(reports[7].sent, 5);
        assert_eq!(reports[7].deliveries.len(), 5);
        assert_eq!(s.nodes[0].queues[0].queue.len(), 3);
    }

    #[test]
    fn control_channel_carries_one() {
        let mut s = setup(&[0.0, 100.0], 8);
        let reports = run(&mut s, &mut sched(&[(0, 1, 0, 2)]));
        assert_eq!(reports[2].deliveries.len(), 1);
        assert_eq!(reports[2].deliveries[0].channel, ChannelId::CONTROL);
    }

    #[test]
    fn idle_node_dozes_whole_window() {
        let mut s = setup(&[0.0, 100.0, 400.0], 0);
        run(&mut s, &mut sched(&[]));
        assert!(s.nodes.iter().all(|n| n.doze_slots == 20));
    }

    #[test]
    fn doze_excludes_scheduled_slots() {
        let mut s = setup(&[0.0, 100.0, 400.0], 4);
        run(&mut s, &mut sched(&[(0, 1, 8, 0), (0, 1, 9, 3)]));
        assert_eq!(s.nodes[0].doze_slots, 18);
        assert_eq!(s.nodes[1].doze_slots, 18);
        assert_eq!(s.nodes[2].doze_slots, 20);
    }

    #[test]
    fn allocation_capped_by_queue() {
        let mut s = setup(&[0.0, 100.0], 6);
        let mut sc = sched(&[(0, 1, 9, 4), (0, 1, 8, 1)]);
        allocate_packets(&mut sc, &s.nodes, &s.graph, &s.spectrum.table).unwrap();
        assert_eq!(sc.entries[0].segment, SegmentId::new(8, 1));
        assert_eq!(sc.entries[0].packets, 5);
        assert_eq!(sc.entries[1].packets, 1);
        let total: usize = run(&mut s, &mut sc).iter().map(|r| r.deliveries.len()).sum();
        assert_eq!(total, 6);
    }

    #[test]
    fn conflicting_entries_lose_acks() {
        let mut s = setup(&[0.0, 120.0, 240.0, 360.0], 2);
        let mut f = LinkQueue::new(1, NodeId(3), 1e6);
        f.queue = s.nodes[0].queues[0].queue.clone();
        s.nodes[2].queues.push(f);
        let reports = run(&mut s, &mut sched(&[(0, 1, 8, 0), (2, 3, 8, 0)]));
        assert_eq!(reports[0].failed, 2);
        assert!(reports[0].deliveries.is_empty());
        assert_eq!(s.nodes[0].queues[0].queue[0].retry_count, 1);
        assert!(s.nodes[0].queues[0].halted);
    }
}
