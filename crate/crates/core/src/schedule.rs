//! The per-frame set of agreed (link, segment) grants.

use std::collections::BTreeSet;

use crate::segments::{Assignment, SegmentId};
use crate::topology::{Link, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ScheduleEntry {
    pub link: Link,
    pub segment: SegmentId,
    pub packets: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrameSchedule {
    pub frame: u64,
    pub entries: Vec<ScheduleEntry>,
}

impl FrameSchedule {
    pub fn new(frame: u64) -> Self {
        FrameSchedule {
            frame,
            entries: Vec::new(),
        }
    }

    /// Adds every segment of `a` with no packets allocated yet.
    pub fn add_assignment(&mut self, a: &Assignment) {
        self.entries.extend(a.segments.iter().map(|&segment| ScheduleEntry {
            link: a.link,
            segment,
            packets: 0,
        }));
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn links(&self) -> BTreeSet<Link> {
        self.entries.iter().map(|e| e.link).collect()
    }

    /// Distinct slots in which `node` transmits or receives.
    pub fn busy_slots(&self, node: NodeId) -> BTreeSet<u16> {
        self.entries
            .iter()
            .filter(|e| e.link.touches(node))
            .map(|e| e.segment.slot)
            .collect()
    }
}
