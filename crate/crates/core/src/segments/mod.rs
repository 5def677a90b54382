//! Communication segments: per-node segment status, link bandwidth, and the
//! greedy segment selection with its collision-free conditions.
//!
//! A communication segment is one `(channel, slot)` pair of the TDMA
//! communication window. Its capacity is the channel rate divided by the
//! number of slots. A link's bandwidth is the set of segments free at both
//! of its endpoints.

pub mod fixture;

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::schedule::FrameSchedule;
use crate::spectrum::{ChannelId, ChannelTable, SensingReport};
use crate::topology::{links_conflict, CommunicationGraph, Link, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SegmentId {
    pub channel: ChannelId,
    pub slot: u16,
}

impl SegmentId {
    pub fn new(channel: u8, slot: u16) -> Self {
        SegmentId {
            channel: ChannelId(channel),
            slot,
        }
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.channel, self.slot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentStatus {
    /// Used by another transmission nearby, or on a channel sensed busy.
    Occupied,
    Free,
    /// Granted to one of the owner's own links this frame.
    Assigned,
}

/// One node's view of every segment for the current frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentTable {
    owner: NodeId,
    frame: u64,
    num_channels: usize,
    num_slots: usize,
    status: Vec<SegmentStatus>,
}

impl SegmentTable {
    /// All segments Free.
    pub fn new(owner: NodeId, frame: u64, num_channels: usize, num_slots: usize) -> Self {
        SegmentTable {
            owner,
            frame,
            num_channels,
            num_slots,
            status: vec![SegmentStatus::Free; num_channels * num_slots],
        }
    }

    /// Fresh table for a frame: channels missing from the sensing report
    /// are Occupied in every slot, everything else Free.
    pub fn from_sensing(report: &SensingReport, num_channels: usize, num_slots: usize) -> Self {
        let mut t = SegmentTable::new(report.node, report.frame, num_channels, num_slots);
        for ch in 0..num_channels {
            if !report.available.contains(&ChannelId(ch as u8)) {
                for slot in 0..num_slots {
                    t.status[ch * num_slots + slot] = SegmentStatus::Occupied;
                }
            }
        }
        t
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn num_slots(&self) -> usize {
        self.num_slots
    }

    fn idx(&self, seg: SegmentId) -> usize {
        let ch = seg.channel.0 as usize;
        assert!(ch < self.num_channels && (seg.slot as usize) < self.num_slots, "segment {seg} out of range");
        ch * self.num_slots + seg.slot as usize
    }

    pub fn status(&self, seg: SegmentId) -> SegmentStatus {
        self.status[self.idx(seg)]
    }

    pub fn set(&mut self, seg: SegmentId, status: SegmentStatus) {
        let i = self.idx(seg);
        self.status[i] = status;
    }

    /// Marks Occupied unless the owner already holds the segment.
    pub fn occupy(&mut self, seg: SegmentId) {
        let i = self.idx(seg);
        if self.status[i] != SegmentStatus::Assigned {
            self.status[i] = SegmentStatus::Occupied;
        }
    }

    /// Grants `seg` to the owner. The same slot on every other channel
    /// stops being free: one transceiver, one channel per slot.
    pub fn assign(&mut self, seg: SegmentId) {
        for ch in 0..self.num_channels {
            let other = SegmentId {
                channel: ChannelId(ch as u8),
                slot: seg.slot,
            };
            if other != seg {
                self.occupy(other);
            }
        }
        self.set(seg, SegmentStatus::Assigned);
    }

    pub fn segments(&self) -> impl Iterator<Item = (SegmentId, SegmentStatus)> + '_ {
        self.status.iter().enumerate().map(move |(i, &s)| {
            (
                SegmentId {
                    channel: ChannelId((i / self.num_slots) as u8),
                    slot: (i % self.num_slots) as u16,
                },
                s,
            )
        })
    }

    pub fn free_segments(&self) -> BTreeSet<SegmentId> {
        self.segments()
            .filter(|(_, s)| *s == SegmentStatus::Free)
            .map(|(seg, _)| seg)
            .collect()
    }

    pub fn assigned_segments(&self) -> BTreeSet<SegmentId> {
        self.segments()
            .filter(|(_, s)| *s == SegmentStatus::Assigned)
            .map(|(seg, _)| seg)
            .collect()
    }
}

/// `B(u, v)`: segments Free in both tables.
pub fn link_bandwidth(u_table: &SegmentTable, v_table: &SegmentTable) -> Result<BTreeSet<SegmentId>> {
    if u_table.frame != v_table.frame {
        return Err(Error::Contract(format!(
            "segment tables from frames {} and {}",
            u_table.frame, v_table.frame
        )));
    }
    let u = u_table.free_segments();
    let v = v_table.free_segments();
    Ok(u.intersection(&v).copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRequirement {
    pub session: u32,
    /// `r(z)`, bits per second.
    pub requested: f64,
    /// `r_r(z)`, bits per second.
    pub remaining: f64,
}

impl RateRequirement {
    pub fn new(session: u32, rate: f64) -> Self {
        RateRequirement {
            session,
            requested: rate,
            remaining: rate,
        }
    }

    /// Requirement left after `a` is granted.
    pub fn after(&self, a: &Assignment) -> RateRequirement {
        RateRequirement {
            remaining: (self.remaining - a.achieved).max(0.0),
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub link: Link,
    pub segments: Vec<SegmentId>,
    /// Sum of segment capacities, bits per second.
    pub achieved: f64,
}

impl Assignment {
    pub fn empty(link: Link) -> Self {
        Assignment {
            link,
            segments: Vec::new(),
            achieved: 0.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionRules {
    pub num_slots: usize,
    /// Check the second condition only against links transmitting from the
    /// receiver, as literally worded, instead of every link incident on it.
    /// Permits a node to receive twice in one slot; for comparison only.
    pub literal_condition2: bool,
}

impl SelectionRules {
    pub fn new(num_slots: usize) -> Self {
        SelectionRules {
            num_slots,
            literal_condition2: false,
        }
    }
}

/// Greedy segment selection for `link = (u, v)`.
///
/// Candidates are visited by capacity, highest first; equal capacities go
/// to the earlier slot, then the lower channel. A candidate `(c, t)` is
/// taken when, against `schedule` plus the segments already taken here:
///
/// 1. slot `t` is not used by any link incident on `u`;
/// 2. slot `t` is not used by any link incident on `v`;
/// 3. `(c, t)` is not used by a link whose transmitter neighbors `v`;
/// 4. `(c, t)` is not used by a link whose receiver neighbors `u`.
///
/// Each taken segment lowers the remaining requirement by its full
/// capacity. Running out of candidates yields a partial assignment.
pub fn select_segments(
    link: Link,
    demand: &RateRequirement,
    candidates: &BTreeSet<SegmentId>,
    schedule: &FrameSchedule,
    g: &CommunicationGraph,
    table: &ChannelTable,
    rules: SelectionRules,
) -> Result<Assignment> {
    let (u, v) = (link.tx, link.rx);
    let mut out = Assignment::empty(link);
    let mut remaining = demand.remaining;
    if remaining <= 0.0 {
        return Ok(out);
    }

    let mut ranked: Vec<(SegmentId, f64)> = candidates
        .iter()
        .map(|&seg| Ok((seg, table.segment_capacity(seg.channel, rules.num_slots)?)))
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.slot.cmp(&b.0.slot))
            .then(a.0.channel.cmp(&b.0.channel))
    });

    let mut by_slot: Vec<Vec<(Link, SegmentId)>> = vec![Vec::new(); rules.num_slots];
    for e in &schedule.entries {
        if let Some(bucket) = by_slot.get_mut(e.segment.slot as usize) {
            bucket.push((e.link, e.segment));
        }
    }

    for (seg, capacity) in ranked {
        if remaining <= 0.0 {
            break;
        }
        let Some(same_slot) = by_slot.get_mut(seg.slot as usize) else {
            return Err(Error::Contract(format!("segment {seg} beyond {} slots", rules.num_slots)));
        };
        let blocked = same_slot.iter().any(|&(other, other_seg)| {
            let cond1 = other.touches(u);
            let cond2 = if rules.literal_condition2 {
                other.tx == v
            } else {
                other.touches(v)
            };
            let same_segment = other_seg == seg;
            let cond3 = same_segment && g.are_neighbors(other.tx, v);
            let cond4 = same_segment && g.are_neighbors(other.rx, u);
            cond1 || cond2 || cond3 || cond4
        });
        if blocked {
            continue;
        }
        same_slot.push((link, seg));
        out.segments.push(seg);
        out.achieved += capacity;
        remaining = (remaining - capacity).max(0.0);
    }
    Ok(out)
}

/// Independent validity check for an assignment against a schedule,
/// phrased through the link conflict relation rather than the selection
/// conditions.
pub fn validate_assignment(a: &Assignment, schedule: &FrameSchedule, g: &CommunicationGraph) -> bool {
    let mut slots = BTreeSet::new();
    for seg in &a.segments {
        if !slots.insert(seg.slot) {
            return false;
        }
    }
    a.segments.iter().all(|seg| {
        schedule.entries.iter().all(|e| {
            e.segment.slot != seg.slot || !links_conflict(a.link, e.link, e.segment.channel == seg.channel, g)
        })
    })
}

/// Rebuilds `table` from what the owner overheard this frame: segments of
/// the owner's own grants become Assigned, segments claimed by grants with
/// an endpoint neighboring the owner become Occupied. Channels sensed busy
/// stay Occupied.
pub fn update_from_beacons(table: &SegmentTable, overheard: &[Assignment], g: &CommunicationGraph) -> SegmentTable {
    let owner = table.owner;
    let mut out = table.clone();
    for a in overheard {
        if a.link.touches(owner) {
            for &seg in &a.segments {
                out.assign(seg);
            }
        } else if g.are_neighbors(owner, a.link.tx) || g.are_neighbors(owner, a.link.rx) {
            for &seg in &a.segments {
                out.occupy(seg);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::schedule::ScheduleEntry;
    use crate::topology::{build_communication_graph, Position, RadioProfile};

    fn chain(n: u32) -> CommunicationGraph {
        let pos: Vec<_> = (0..n).map(|i| (NodeId(i), Position::new(120.0 * i as f64, 0.0))).collect();
        let chans: BTreeMap<_, _> = (0..n)
            .map(|i| (NodeId(i), (0..12).map(ChannelId).collect::<BTreeSet<_>>()))
            .collect();
        build_communication_graph(&pos, RadioProfile::default(), &chans).unwrap()
    }

    fn segs(list: &[(u8, u16)]) -> BTreeSet<SegmentId> {
        list.iter().map(|&(c, t)| SegmentId::new(c, t)).collect()
    }

    fn table_with_free(owner: u32, free: &[(u8, u16)]) -> SegmentTable {
        let mut t = SegmentTable::new(NodeId(owner), 0, 12, 20);
        for (seg, _) in t.clone().segments() {
            t.set(seg, SegmentStatus::Occupied);
        }
        for &(c, s) in free {
            t.set(SegmentId::new(c, s), SegmentStatus::Free);
        }
        t
    }

    #[test]
    fn bandwidth_is_intersection() {
        let u = table_with_free(0, &[(1, 0), (1, 1), (2, 3)]);
        let v = table_with_free(1, &[(1, 1), (2, 3), (3, 4)]);
        assert_eq!(link_bandwidth(&u, &v).unwrap(), segs(&[(1, 1), (2, 3)]));
        assert_eq!(link_bandwidth(&u, &u).unwrap(), u.free_segments());
        let w = table_with_free(2, &[(5, 5)]);
        assert!(link_bandwidth(&u, &w).unwrap().is_empty());
    }

    #[test]
    fn bandwidth_frame_mismatch() {
        let u = SegmentTable::new(NodeId(0), 1, 12, 20);
        let v = SegmentTable::new(NodeId(1), 2, 12, 20);
        assert!(matches!(link_bandwidth(&u, &v), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_demand_gives_empty_assignment() {
        let g = chain(2);
        let link = Link::new(NodeId(0), NodeId(1));
        let a = select_segments(
            link,
            &RateRequirement::new(0, 0.0),
            &segs(&[(1, 0)]),
            &FrameSchedule::new(0),
            &g,
            &ChannelTable::default(),
            SelectionRules::new(20),
        )
        .unwrap();
        assert!(a.is_empty());
        assert_eq!(a.achieved, 0.0);
    }

    #[test]
    fn two_slow_segments_cover_150k() {
        let g = chain(2);
        let link = Link::new(NodeId(0), NodeId(1));
        let a = select_segments(
            link,
            &RateRequirement::new(0, 150_000.0),
            &segs(&[(1, 0), (1, 1)]),
            &FrameSchedule::new(0),
            &g,
            &ChannelTable::default(),
            SelectionRules::new(20),
        )
        .unwrap();
        assert_eq!(a.segments, vec![SegmentId::new(1, 0), SegmentId::new(1, 1)]);
        assert_eq!(a.achieved, 200_000.0);
        assert_eq!(RateRequirement::new(0, 150_000.0).after(&a).remaining, 0.0);
    }

    #[test]
    fn fast_segment_alone_covers_500k() {
        let g = chain(2);
        let link = Link::new(NodeId(0), NodeId(1));
        let a = select_segments(
            link,
            &RateRequirement::new(0, 500_000.0),
            &segs(&[(9, 1), (1, 2)]),
            &FrameSchedule::new(0),
            &g,
            &ChannelTable::default(),
            SelectionRules::new(20),
        )
        .unwrap();
        assert_eq!(a.segments, vec![SegmentId::new(9, 1)]);
        assert_eq!(a.achieved, 550_000.0);
    }

    #[test]
    fn slot_held_by_incident_link_is_skipped() {
        let g = chain(3);
        let (u, v, w) = (NodeId(1), NodeId(2), NodeId(0));
        let mut schedule = FrameSchedule::new(0);
        schedule.entries.push(ScheduleEntry {
            link: Link::new(u, w),
            segment: SegmentId::new(1, 0),
            packets: 1,
        });
        let a = select_segments(
            Link::new(u, v),
            &RateRequirement::new(0, 1.0),
            &segs(&[(11, 0), (1, 3)]),
            &schedule,
            &g,
            &ChannelTable::default(),
            SelectionRules::new(20),
        )
        .unwrap();
        assert_eq!(a.segments, vec![SegmentId::new(1, 3)]);
        assert!(validate_assignment(&a, &schedule, &g));
    }

    #[test]
    fn one_segment_per_slot_per_link() {
        let g = chain(2);
        let a = select_segments(
            Link::new(NodeId(0), NodeId(1)),
            &RateRequirement::new(0, 1e9),
            &segs(&[(8, 0), (9, 0), (10, 0), (1, 1)]),
            &FrameSchedule::new(0),
            &g,
            &ChannelTable::default(),
            SelectionRules::new(20),
        )
        .unwrap();
        assert_eq!(a.segments, vec![SegmentId::new(8, 0), SegmentId::new(1, 1)]);
    }

    #[test]
    fn literal_condition2_lets_receiver_collect_twice() {
        // 0 -> 1 already on (8,0); 2 -> 1 asks for slot 0 on another channel.
        let g = chain(3);
        let mut schedule = FrameSchedule::new(0);
        schedule.entries.push(ScheduleEntry {
            link: Link::new(NodeId(0), NodeId(1)),
            segment: SegmentId::new(8, 0),
            packets: 1,
        });
        let link = Link::new(NodeId(2), NodeId(1));
        let cands = segs(&[(9, 0)]);
        let demand = RateRequirement::new(0, 1.0);
        let table = ChannelTable::default();
        let strict = select_segments(link, &demand, &cands, &schedule, &g, &table, SelectionRules::new(20)).unwrap();
        assert!(strict.is_empty());
        let rules = SelectionRules {
            num_slots: 20,
            literal_condition2: true,
        };
        let literal = select_segments(link, &demand, &cands, &schedule, &g, &table, rules).unwrap();
        assert_eq!(literal.segments, vec![SegmentId::new(9, 0)]);
        assert!(!validate_assignment(&literal, &schedule, &g));
    }

    #[test]
    fn validate_rejects_reused_incident_slot() {
        let g = chain(3);
        let mut schedule = FrameSchedule::new(0);
        schedule.entries.push(ScheduleEntry {
            link: Link::new(NodeId(1), NodeId(0)),
            segment: SegmentId::new(3, 5),
            packets: 1,
        });
        let bad = Assignment {
            link: Link::new(NodeId(1), NodeId(2)),
            segments: vec![SegmentId::new(7, 5)],
            achieved: 275_000.0,
        };
        assert!(!validate_assignment(&bad, &schedule, &g));
        assert!(validate_assignment(&Assignment::empty(bad.link), &schedule, &g));
    }

    #[test]
    fn beacons_mark_neighbor_claims_occupied() {
        let g = chain(4);
        let base = SegmentTable::new(NodeId(2), 0, 12, 20);
        let claim = Assignment {
            link: Link::new(NodeId(0), NodeId(1)),
            segments: vec![SegmentId::new(1, 3)],
            achieved: 100_000.0,
        };
        let updated = update_from_beacons(&base, std::slice::from_ref(&claim), &g);
        assert_eq!(updated.status(SegmentId::new(1, 3)), SegmentStatus::Occupied);
        assert_eq!(updated.free_segments().len(), 12 * 20 - 1);

        // Node 3 is two hops from B and does not react.
        let far = update_from_beacons(&SegmentTable::new(NodeId(3), 0, 12, 20), &[claim], &g);
        assert_eq!(far.free_segments().len(), 12 * 20);
    }

    #[test]
    fn beacons_with_no_traffic_leave_everything_free() {
        let g = chain(2);
        let base = SegmentTable::new(NodeId(0), 0, 12, 20);
        assert_eq!(update_from_beacons(&base, &[], &g), base);
    }

    #[test]
    fn busy_channel_occupied_in_every_slot() {
        let report = SensingReport {
            node: NodeId(0),
            frame: 0,
            available: (0..12).filter(|&c| c != 5).map(ChannelId).collect(),
        };
        let t = SegmentTable::from_sensing(&report, 12, 20);
        for slot in 0..20 {
            assert_eq!(t.status(SegmentId::new(5, slot)), SegmentStatus::Occupied);
        }
        assert_eq!(t.free_segments().len(), 11 * 20);
    }

    #[test]
    fn own_grant_blocks_the_slot_on_other_channels() {
        let g = chain(2);
        let base = SegmentTable::new(NodeId(0), 0, 12, 20);
        let own = Assignment {
            link: Link::new(NodeId(0), NodeId(1)),
            segments: vec![SegmentId::new(4, 2)],
            achieved: 275_000.0,
        };
        let t = update_from_beacons(&base, &[own], &g);
        assert_eq!(t.status(SegmentId::new(4, 2)), SegmentStatus::Assigned);
        assert_eq!(t.status(SegmentId::new(9, 2)), SegmentStatus::Occupied);
        assert_eq!(t.free_segments().len(), 12 * 19);
    }
}
