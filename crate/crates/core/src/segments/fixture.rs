//! Small allocator instances in a line-oriented text format.
//!
//! ```text
//! # comment
//! nodes 0 1 2 3
//! links 0-1 1-2 2-3
//! channels 2e6 11e6        # data-channel rates; control is 2 Mbps
//! slots 4
//! free_segments 0 1/0 1/1 2/3
//! free_segments 1 1/1 2/3
//! schedule 2->3 1/0        # grants already in the frame
//! demand 0->1 150000
//! expect 1/1 2/3           # optional
//! ```
//!
//! Segments are written `channel/slot`. Nodes with no `free_segments`
//! stanza have nothing free.

use std::collections::{BTreeMap, BTreeSet};

use super::{link_bandwidth, select_segments, Assignment, RateRequirement, SegmentId, SegmentStatus, SegmentTable, SelectionRules};
use crate::error::{Error, Result};
use crate::schedule::{FrameSchedule, ScheduleEntry};
use crate::spectrum::{ChannelConfig, ChannelTable};
use crate::topology::{CommunicationGraph, Link, NodeId};

#[derive(Debug, Clone)]
pub struct Fixture {
    pub graph: CommunicationGraph,
    pub table: ChannelTable,
    pub num_slots: usize,
    pub free: BTreeMap<NodeId, BTreeSet<SegmentId>>,
    pub schedule: FrameSchedule,
    pub link: Link,
    pub demand: RateRequirement,
    pub expect: Option<Vec<SegmentId>>,
}

fn parse_segment(tok: &str) -> Option<SegmentId> {
    let (c, t) = tok.split_once('/')?;
    Some(SegmentId::new(c.parse().ok()?, t.parse().ok()?))
}

fn parse_link(tok: &str) -> Option<Link> {
    let (a, b) = tok.split_once("->")?;
    Some(Link::new(NodeId(a.parse().ok()?), NodeId(b.parse().ok()?)))
}

impl Fixture {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let mut channels = ChannelConfig::default();
        let mut num_slots = None;
        let mut free = BTreeMap::new();
        let mut entries = Vec::new();
        let mut demand = None;
        let mut expect = None;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                message,
            };
            let mut toks = line.split_whitespace();
            let keyword = toks.next().unwrap_or_default();
            let rest: Vec<&str> = toks.collect();
            let seg = |t: &str| parse_segment(t).ok_or_else(|| err(format!("bad segment `{t}`")));
            let node = |t: &str| t.parse::<u32>().map(NodeId).map_err(|_| err(format!("bad node `{t}`")));
            match keyword {
                "nodes" => nodes = rest.iter().map(|t| node(t)).collect::<Result<_>>()?,
                "links" => {
                    for t in &rest {
                        let (a, b) = t.split_once('-').ok_or_else(|| err(format!("bad link `{t}`")))?;
                        edges.push((node(a)?, node(b)?));
                    }
                }
                "channels" => {
                    channels.data_rates = rest
                        .iter()
                        .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad rate `{t}`"))))
                        .collect::<Result<_>>()?;
                }
                "slots" => {
                    let n = rest.first().and_then(|t| t.parse().ok()).ok_or_else(|| err("bad slot count".into()))?;
                    num_slots = Some(n);
                }
                "free_segments" => {
                    let (owner, segs) = rest.split_first().ok_or_else(|| err("missing owner".into()))?;
                    let set: BTreeSet<SegmentId> = segs.iter().map(|t| seg(t)).collect::<Result<_>>()?;
                    free.insert(node(owner)?, set);
                }
                "schedule" => {
                    let (link, segs) = rest.split_first().ok_or_else(|| err("missing link".into()))?;
                    let link = parse_link(link).ok_or_else(|| err(format!("bad link `{link}`")))?;
                    for t in segs {
                        entries.push(ScheduleEntry {
                            link,
                            segment: seg(t)?,
                            packets: 0,
                        });
                    }
                }
                "demand" => {
                    let [link, rate] = rest[..] else {
                        return Err(err("expected `demand <tx>-><rx> <bps>`".into()));
                    };
                    let link = parse_link(link).ok_or_else(|| err(format!("bad link `{link}`")))?;
                    let rate: f64 = rate.parse().map_err(|_| err(format!("bad rate `{rate}`")))?;
                    demand = Some((link, rate));
                }
                "expect" => expect = Some(rest.iter().map(|t| seg(t)).collect::<Result<Vec<_>>>()?),
                other => return Err(err(format!("unknown stanza `{other}`"))),
            }
        }

        let missing = |what: &str| Error::Parse {
            path: origin.to_string(),
            line: 0,
            message: format!("missing `{what}` stanza"),
        };
        let table = ChannelTable::from_config(&channels)?;
        let graph = CommunicationGraph::from_edges(&nodes, &edges, &table.all_channel_ids())?;
        let num_slots = num_slots.ok_or_else(|| missing("slots"))?;
        let (link, rate) = demand.ok_or_else(|| missing("demand"))?;
        Ok(Fixture {
            graph,
            table,
            num_slots,
            free,
            schedule: FrameSchedule { frame: 0, entries },
            link,
            demand: RateRequirement::new(0, rate),
            expect,
        })
    }

    fn table_for(&self, node: NodeId) -> SegmentTable {
        let channels = self.table.channels().len();
        let mut t = SegmentTable::new(node, 0, channels, self.num_slots);
        let free = self.free.get(&node).cloned().unwrap_or_default();
        for (seg, _) in t.clone().segments() {
            if !free.contains(&seg) {
                t.set(seg, SegmentStatus::Occupied);
            }
        }
        t
    }

    /// `B(u, v)` for the demanded link.
    pub fn candidates(&self) -> Result<BTreeSet<SegmentId>> {
        link_bandwidth(&self.table_for(self.link.tx), &self.table_for(self.link.rx))
    }

    pub fn run(&self) -> Result<Assignment> {
        select_segments(
            self.link,
            &self.demand,
            &self.candidates()?,
            &self.schedule,
            &self.graph,
            &self.table,
            SelectionRules::new(self.num_slots),
        )
    }
}
