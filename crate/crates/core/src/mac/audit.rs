//! Global schedule audit, independent of how the schedule was negotiated.

use std::ops::AddAssign;

use crate::schedule::FrameSchedule;
use crate::topology::{links_conflict, CommunicationGraph};

/// Violations found in one frame's schedule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScheduleAudit {
    /// Entry pairs on the same segment whose links conflict.
    pub conflicting_pairs: u64,
    /// Entry pairs in the same slot sharing a node.
    pub double_booked: u64,
}

impl ScheduleAudit {
    pub fn is_clean(&self) -> bool {
        self.conflicting_pairs == 0 && self.double_booked == 0
    }
}

pub fn audit_schedule(schedule: &FrameSchedule, g: &CommunicationGraph) -> ScheduleAudit {
    let mut out = ScheduleAudit::default();
    let e = &schedule.entries;
    for i in 0..e.len() {
        for j in i + 1..e.len() {
            if e[i].segment.slot != e[j].segment.slot {
                continue;
            }
            if e[i].link.shares_node(&e[j].link) {
                out.double_booked += 1;
            }
            if e[i].segment.channel == e[j].segment.channel && links_conflict(e[i].link, e[j].link, true, g) {
                out.conflicting_pairs += 1;
            }
        }
    }
    out
}

/// Run-wide audit totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub frames: u64,
    /// Frames with at least one schedule violation.
    pub dirty_frames: u64,
    pub conflicting_pairs: u64,
    pub double_booked: u64,
    /// DATA sent on a channel busy at either endpoint at frame start.
    pub pu_violations: u64,
    /// Scheduled slots whose DATA or ACK was lost.
    pub data_collisions: u64,
}

impl AuditReport {
    pub fn record(&mut self, frame: ScheduleAudit) {
        self.frames += 1;
        if !frame.is_clean() {
            self.dirty_frames += 1;
        }
        self.conflicting_pairs += frame.conflicting_pairs;
        self.double_booked += frame.double_booked;
    }

    pub fn is_clean(&self) -> bool {
        self.conflicting_pairs == 0 && self.double_booked == 0 && self.pu_violations == 0
    }
}

impl AddAssign for AuditReport {
    fn add_assign(&mut self, o: AuditReport) {
        self.frames += o.frames;
        self.dirty_frames += o.dirty_frames;
        self.conflicting_pairs += o.conflicting_pairs;
        self.double_booked += o.double_booked;
        self.pu_violations += o.pu_violations;
        self.data_collisions += o.data_collisions;
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::schedule::ScheduleEntry;
    use crate::segments::SegmentId;
    use crate::spectrum::ChannelId;
    use crate::topology::{Link, NodeId};

    fn chain() -> CommunicationGraph {
        let ids: Vec<_> = (0..4).map(NodeId).collect();
        let edges = [(NodeId(0), NodeId(1)), (NodeId(1), NodeId(2)), (NodeId(2), NodeId(3))];
        CommunicationGraph::from_edges(&ids, &edges, &BTreeSet::from([ChannelId(0), ChannelId(1), ChannelId(2)])).unwrap()
    }

    fn entry(a: u32, b: u32, c: u8, t: u16) -> ScheduleEntry {
        ScheduleEntry {
            link: Link::new(NodeId(a), NodeId(b)),
            segment: SegmentId::new(c, t),
            packets: 1,
        }
    }

    #[test]
    fn flags_hidden_terminal_reuse() {
        let s = FrameSchedule {
            frame: 0,
            entries: vec![entry(0, 1, 1, 0), entry(2, 3, 1, 0)],
        };
        let a = audit_schedule(&s, &chain());
        assert_eq!(a.conflicting_pairs, 1);
        assert_eq!(a.double_booked, 0);
    }

    #[test]
    fn distinct_channels_are_clean() {
        let s = FrameSchedule {
            frame: 0,
            entries: vec![entry(0, 1, 1, 0), entry(2, 3, 2, 0)],
        };
        assert!(audit_schedule(&s, &chain()).is_clean());
    }

    #[test]
    fn node_in_two_entries_of_a_slot() {
        let s = FrameSchedule {
            frame: 0,
            entries: vec![entry(0, 1, 1, 3), entry(1, 2, 2, 3)],
        };
        let a = audit_schedule(&s, &chain());
        assert_eq!(a.double_booked, 1);
        assert_eq!(a.conflicting_pairs, 0);
    }
}
