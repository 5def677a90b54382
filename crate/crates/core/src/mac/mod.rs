//! Per-node CR-MAC: frame timing, node state, the ATIM negotiation window,
//! the TDMA communication window, and retransmission.
//!
//! A frame is `sensing | beacons + ATIM mini-slots | |T| data slots`, with
//! every node sharing frame boundaries.

pub mod atim;
pub mod audit;
pub mod comm;

use std::collections::{BTreeSet, VecDeque};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::schedule::FrameSchedule;
use crate::segments::{Assignment, SegmentId, SegmentTable};
use crate::spectrum::{ChannelId, SensingReport};
use crate::time::SimTime;
use crate::topology::NodeId;

pub use atim::{atim_window_run, AtimEnv, AtimOutcome, AtimParams, AtimWindow, BackoffSource, ControlRegions, NegotiationRequest, RngBackoff};
pub use audit::{audit_schedule, AuditReport, ScheduleAudit};
pub use comm::{allocate_packets, comm_slot_run, comm_window_run, record_doze, CommEnv, Delivery, SlotReport};

/// Airtime of a 20-byte control frame plus PLCP preamble at 2 Mbps. Every
/// ATIM mini-slot must hold one.
pub const MIN_MINI_SLOT: f64 = 272e-6;

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameConfig {
    pub sensing_dur: f64,
    pub atim_dur: f64,
    /// Leading part of the ATIM window reserved for beacons.
    pub beacon_dur: f64,
    pub num_slots: usize,
    pub d_data: f64,
    pub d_ack: f64,
    pub d_guard: f64,
    pub switch_delay: f64,
    /// Contention mini-slots in the ATIM window after the beacons.
    pub mini_slots: usize,
    /// Backoff is uniform in `[0, contention_window - 1]` mini-slots.
    pub contention_window: u32,
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig {
            sensing_dur: 0.002,
            atim_dur: 0.020,
            beacon_dur: 0.002,
            num_slots: 20,
            d_data: 0.004,
            d_ack: 0.0003,
            d_guard: 0.0001,
            switch_delay: 40e-6,
            mini_slots: 40,
            contention_window: 16,
        }
    }
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must be a positive number of seconds, got {v}")))
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        positive("frame.sensing_dur", self.sensing_dur)?;
        positive("frame.atim_dur", self.atim_dur)?;
        positive("frame.beacon_dur", self.beacon_dur)?;
        positive("frame.d_data", self.d_data)?;
        positive("frame.d_ack", self.d_ack)?;
        positive("frame.d_guard", self.d_guard)?;
        if !(self.switch_delay.is_finite() && self.switch_delay >= 0.0) {
            return Err(Error::validation("frame.switch_delay", "must be non-negative"));
        }
        if self.num_slots == 0 || self.num_slots > usize::from(u16::MAX) {
            return Err(Error::validation("frame.num_slots", format!("must be in 1..=65535, got {}", self.num_slots)));
        }
        if self.d_guard < self.switch_delay {
            return Err(Error::validation(
                "frame.d_guard",
                format!("guard {} s cannot absorb the {} s switching delay", self.d_guard, self.switch_delay),
            ));
        }
        if self.beacon_dur >= self.atim_dur {
            return Err(Error::validation("frame.beacon_dur", "must be shorter than atim_dur"));
        }
        if self.mini_slots < 3 {
            return Err(Error::validation("frame.mini_slots", "a handshake needs at least 3 mini-slots"));
        }
        if self.mini_slot_secs() < MIN_MINI_SLOT {
            return Err(Error::validation(
                "frame.atim_dur",
                format!(
                    "mini-slots of {:.1} us cannot carry a control frame ({:.0} us)",
                    self.mini_slot_secs() * 1e6,
                    MIN_MINI_SLOT * 1e6
                ),
            ));
        }
        if self.contention_window == 0 {
            return Err(Error::validation("frame.contention_window", "must be at least 1"));
        }
        Ok(())
    }

    /// `D_slot = D_data + D_ACK + 2 D_guard`.
    pub fn slot_secs(&self) -> f64 {
        self.d_data + self.d_ack + 2.0 * self.d_guard
    }

    pub fn frame_secs(&self) -> f64 {
        self.sensing_dur + self.atim_dur + self.num_slots as f64 * self.slot_secs()
    }

    pub fn mini_slot_secs(&self) -> f64 {
        (self.atim_dur - self.beacon_dur) / self.mini_slots as f64
    }

    pub fn frame_duration(&self) -> SimTime {
        SimTime::from_secs(self.frame_secs())
    }

    /// Offset of contention mini-slot `m` from the frame start.
    pub fn mini_slot_offset(&self, m: usize) -> SimTime {
        SimTime::from_secs(self.sensing_dur + self.beacon_dur + m as f64 * self.mini_slot_secs())
    }

    /// Offset of data slot `j` from the frame start.
    pub fn slot_offset(&self, j: usize) -> SimTime {
        SimTime::from_secs(self.sensing_dur + self.atim_dur + j as f64 * self.slot_secs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacConfig {
    pub retry_limit: u32,
    /// Drop-tail limit per flow queue, packets.
    pub queue_limit: usize,
    pub max_negotiations_per_frame: usize,
    /// A missed ACK holds the flow back `0..=retry_backoff_max` frames.
    pub retry_backoff_max: u32,
    /// Nodes apply grants overheard on the control channel. Off reproduces
    /// the multichannel hidden terminal.
    pub overhear: bool,
    /// Off treats every channel as idle at frame start.
    pub sensing: bool,
    pub literal_condition2: bool,
    /// Reference channel rate for per-flow demand, bits per second.
    pub reference_rate: f64,
}

impl Default for MacConfig {
    fn default() -> Self {
        MacConfig {
            retry_limit: 7,
            queue_limit: 50,
            max_negotiations_per_frame: 2,
            retry_backoff_max: 3,
            overhear: true,
            sensing: true,
            literal_condition2: false,
            reference_rate: 2e6,
        }
    }
}

impl MacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.queue_limit == 0 {
            return Err(Error::validation("mac.queue_limit", "must be at least 1"));
        }
        if self.max_negotiations_per_frame == 0 {
            return Err(Error::validation("mac.max_negotiations_per_frame", "must be at least 1"));
        }
        if !(self.reference_rate.is_finite() && self.reference_rate > 0.0) {
            return Err(Error::validation("mac.reference_rate", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlMessage {
    Beacon {
        sender: NodeId,
        available: BTreeSet<ChannelId>,
        assignments: Vec<Assignment>,
    },
    Atim {
        sender: NodeId,
        receiver: NodeId,
        free: BTreeSet<SegmentId>,
    },
    AtimAck {
        sender: NodeId,
        receiver: NodeId,
        chosen: Vec<SegmentId>,
    },
    AtimRes {
        sender: NodeId,
        receiver: NodeId,
        confirmed: Vec<SegmentId>,
    },
}

impl ControlMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ControlMessage::Beacon { .. } => "beacon",
            ControlMessage::Atim { .. } => "atim",
            ControlMessage::AtimAck { .. } => "atim-ack",
            ControlMessage::AtimRes { .. } => "atim-res",
        }
    }

    pub fn sender(&self) -> NodeId {
        match self {
            ControlMessage::Beacon { sender, .. }
            | ControlMessage::Atim { sender, .. }
            | ControlMessage::AtimAck { sender, .. }
            | ControlMessage::AtimRes { sender, .. } => *sender,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataPacket {
    pub id: u64,
    pub flow: u32,
    pub generated: SimTime,
    pub bits: u64,
    pub retry_count: u32,
    /// Generated after warmup, so it counts toward delay and PDR.
    pub measured: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissedAck {
    Retry,
    Drop,
}

/// Bumps the retry count of a packet whose DATA went unacknowledged.
pub fn handle_missed_ack(packet: &mut DataPacket, retry_limit: u32) -> MissedAck {
    packet.retry_count += 1;
    if packet.retry_count > retry_limit {
        MissedAck::Drop
    } else {
        MissedAck::Retry
    }
}

/// FIFO of packets waiting at one node for one next hop. Every flow routed
/// over the link shares it.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkQueue {
    /// Lowest id among the flows routed over the link; labels its requests.
    pub flow: u32,
    pub dst: NodeId,
    /// Sum of the session rates routed over the link, bits per second.
    pub rate: f64,
    pub queue: VecDeque<DataPacket>,
    /// First frame in which the link may negotiate again.
    pub eligible_from: u64,
    /// Stopped sending for the rest of the current frame after a loss.
    pub halted: bool,
}

impl LinkQueue {
    pub fn new(flow: u32, dst: NodeId, rate: f64) -> Self {
        LinkQueue {
            flow,
            dst,
            rate,
            queue: VecDeque::new(),
            eligible_from: 0,
            halted: false,
        }
    }

    pub fn eligible(&self, frame: u64) -> bool {
        frame >= self.eligible_from && !self.queue.is_empty()
    }

    /// Rate to request this frame: the session rate, raised to cover the
    /// backlog at `per_packet` bits per second per queued packet.
    pub fn demand(&self, per_packet: f64) -> f64 {
        self.rate.max(self.queue.len() as f64 * per_packet)
    }

    /// Tail-drops when full; returns whether the packet was queued.
    pub fn enqueue(&mut self, p: DataPacket, limit: usize) -> bool {
        if self.queue.len() >= limit {
            return false;
        }
        self.queue.push_back(p);
        true
    }

    /// Applies a missed ACK to the first `sent` packets. Survivors stay at
    /// the head in order; the flow is held back `backoff_frames` frames
    /// after `frame`. Returns the dropped packets.
    pub fn missed_ack(&mut self, sent: usize, frame: u64, backoff_frames: u32, retry_limit: u32) -> Vec<DataPacket> {
        let mut dropped = Vec::new();
        let mut kept = VecDeque::with_capacity(sent);
        for mut p in self.queue.drain(..sent.min(self.queue.len())) {
            match handle_missed_ack(&mut p, retry_limit) {
                MissedAck::Retry => kept.push_back(p),
                MissedAck::Drop => dropped.push(p),
            }
        }
        while let Some(p) = kept.pop_back() {
            self.queue.push_front(p);
        }
        self.eligible_from = frame + 1 + u64::from(backoff_frames);
        self.halted = true;
        dropped
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeMacState {
    pub node: NodeId,
    pub queues: Vec<LinkQueue>,
    pub report: SensingReport,
    pub table: SegmentTable,
    /// Grants this node took part in or overheard this frame.
    pub known: FrameSchedule,
    pub doze_slots: u64,
}

impl NodeMacState {
    pub fn new(node: NodeId, num_channels: usize, num_slots: usize) -> Self {
        NodeMacState {
            node,
            queues: Vec::new(),
            report: SensingReport {
                node,
                frame: 0,
                available: BTreeSet::new(),
            },
            table: SegmentTable::new(node, 0, num_channels, num_slots),
            known: FrameSchedule::new(0),
            doze_slots: 0,
        }
    }

    /// Starts frame `report.frame`: the table is rebuilt from the sensing
    /// report, so last frame's grants are gone.
    pub fn begin_frame(&mut self, report: SensingReport, num_channels: usize, num_slots: usize) {
        self.table = SegmentTable::from_sensing(&report, num_channels, num_slots);
        self.known = FrameSchedule::new(report.frame);
        self.report = report;
        for f in &mut self.queues {
            f.halted = false;
        }
    }

    pub fn has_traffic(&self, frame: u64) -> bool {
        self.queues.iter().any(|f| f.eligible(frame))
    }

    pub fn queue_to(&mut self, dst: NodeId) -> Option<&mut LinkQueue> {
        self.queues.iter_mut().find(|f| f.dst == dst)
    }

    /// Slots of this frame in which the node transmits or receives.
    pub fn scheduled_slots(&self) -> BTreeSet<u16> {
        self.known.busy_slots(self.node)
    }
}
