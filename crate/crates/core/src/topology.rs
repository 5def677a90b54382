//! Node placement, the communication graph and the protocol-model conflict
//! relation between links.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::ChannelId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Radio ranges in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioProfile {
    pub tx_range: f64,
    pub interference_range: f64,
    pub control_tx_range: f64,
}

impl Default for RadioProfile {
    fn default() -> Self {
        RadioProfile {
            tx_range: 150.0,
            interference_range: 300.0,
            control_tx_range: 200.0,
        }
    }
}

impl RadioProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.tx_range > 0.0) {
            return Err(Error::validation("radio.tx_range", "must be positive"));
        }
        if self.interference_range < self.tx_range {
            return Err(Error::validation(
                "radio.interference_range",
                "must be at least tx_range",
            ));
        }
        if !(self.control_tx_range > 0.0) {
            return Err(Error::validation("radio.control_tx_range", "must be positive"));
        }
        Ok(())
    }
}

/// A directed link: `tx` transmits DATA to `rx`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Link {
    pub tx: NodeId,
    pub rx: NodeId,
}

impl Link {
    pub fn new(tx: NodeId, rx: NodeId) -> Self {
        Link { tx, rx }
    }

    pub fn reversed(self) -> Link {
        Link::new(self.rx, self.tx)
    }

    pub fn touches(&self, node: NodeId) -> bool {
        self.tx == node || self.rx == node
    }

    pub fn shares_node(&self, other: &Link) -> bool {
        self.touches(other.tx) || self.touches(other.rx)
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.tx, self.rx)
    }
}

#[derive(Debug, Clone)]
pub struct CommunicationGraph {
    profile: RadioProfile,
    ids: Vec<NodeId>,
    index: BTreeMap<NodeId, usize>,
    positions: Vec<Position>,
    channels: Vec<BTreeSet<ChannelId>>,
    neighbors: Vec<BTreeSet<NodeId>>,
    adjacent: Vec<bool>,
}

pub fn build_communication_graph(
    positions: &[(NodeId, Position)],
    profile: RadioProfile,
    channel_lists: &BTreeMap<NodeId, BTreeSet<ChannelId>>,
) -> Result<CommunicationGraph> {
    if positions.is_empty() {
        return Err(Error::Config("no nodes given".into()));
    }
    let mut index = BTreeMap::new();
    for (i, (id, _)) in positions.iter().enumerate() {
        if index.insert(*id, i).is_some() {
            return Err(Error::DuplicateNode(*id));
        }
    }
    let n = positions.len();
    let ids: Vec<NodeId> = positions.iter().map(|(id, _)| *id).collect();
    let pos: Vec<Position> = positions.iter().map(|(_, p)| *p).collect();
    let channels: Vec<BTreeSet<ChannelId>> = ids
        .iter()
        .map(|id| channel_lists.get(id).cloned().unwrap_or_default())
        .collect();

    let mut neighbors = vec![BTreeSet::new(); n];
    let mut adjacent = vec![false; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let in_range = pos[i].distance(&pos[j]) <= profile.tx_range;
            if in_range && !channels[i].is_disjoint(&channels[j]) {
                neighbors[i].insert(ids[j]);
                neighbors[j].insert(ids[i]);
                adjacent[i * n + j] = true;
                adjacent[j * n + i] = true;
            }
        }
    }

    Ok(CommunicationGraph {
        profile,
        ids,
        index,
        positions: pos,
        channels,
        neighbors,
        adjacent,
    })
}

impl CommunicationGraph {
    /// Graph with explicit adjacency and no geometry (all nodes at the
    /// origin). Used by test fixtures and small hand-built instances.
    pub fn from_edges(nodes: &[NodeId], edges: &[(NodeId, NodeId)], channels: &BTreeSet<ChannelId>) -> Result<Self> {
        let positions: Vec<_> = nodes.iter().map(|&id| (id, Position::new(0.0, 0.0))).collect();
        // Zero range: nothing is adjacent until the edges are added below.
        let profile = RadioProfile {
            tx_range: -1.0,
            ..RadioProfile::default()
        };
        let lists = nodes.iter().map(|&id| (id, channels.clone())).collect();
        let mut g = build_communication_graph(&positions, profile, &lists)?;
        g.profile = RadioProfile::default();
        let n = g.ids.len();
        for &(a, b) in edges {
            let (i, j) = (g.index_of(a)?, g.index_of(b)?);
            if i == j {
                return Err(Error::Config(format!("self-loop on node {a}")));
            }
            g.neighbors[i].insert(b);
            g.neighbors[j].insert(a);
            g.adjacent[i * n + j] = true;
            g.adjacent[j * n + i] = true;
        }
        Ok(g)
    }

    pub fn profile(&self) -> &RadioProfile {
        &self.profile
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn node_ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn contains(&self, v: NodeId) -> bool {
        self.index.contains_key(&v)
    }

    /// Dense index of a node, stable for the lifetime of the graph.
    pub fn index_of(&self, v: NodeId) -> Result<usize> {
        self.index.get(&v).copied().ok_or(Error::UnknownNode(v))
    }

    pub fn position(&self, v: NodeId) -> Result<Position> {
        Ok(self.positions[self.index_of(v)?])
    }

    pub fn channels(&self, v: NodeId) -> Result<&BTreeSet<ChannelId>> {
        Ok(&self.channels[self.index_of(v)?])
    }

    pub fn neighbors(&self, v: NodeId) -> Result<&BTreeSet<NodeId>> {
        Ok(&self.neighbors[self.index_of(v)?])
    }

    /// Unknown nodes are never adjacent.
    pub fn are_neighbors(&self, a: NodeId, b: NodeId) -> bool {
        match (self.index.get(&a), self.index.get(&b)) {
            (Some(&i), Some(&j)) => self.adjacent[i * self.ids.len() + j],
            _ => false,
        }
    }

    pub fn has_link(&self, link: Link) -> bool {
        self.are_neighbors(link.tx, link.rx)
    }

    /// Every directed link, ordered by (tx, rx).
    pub fn links(&self) -> Vec<Link> {
        let mut out = Vec::new();
        for (i, set) in self.neighbors.iter().enumerate() {
            for &rx in set {
                out.push(Link::new(self.ids[i], rx));
            }
        }
        out.sort();
        out
    }

    /// One representative `(a, b)` with `a < b` per bidirectional link.
    pub fn undirected_links(&self) -> Vec<Link> {
        self.links().into_iter().filter(|l| l.tx < l.rx).collect()
    }

    /// Hop distance by breadth-first search, `None` when disconnected.
    pub fn hop_distance(&self, from: NodeId, to: NodeId) -> Option<usize> {
        let start = self.index_of(from).ok()?;
        let goal = self.index_of(to).ok()?;
        let mut dist = vec![usize::MAX; self.ids.len()];
        let mut queue = VecDeque::from([start]);
        dist[start] = 0;
        while let Some(i) = queue.pop_front() {
            if i == goal {
                return Some(dist[i]);
            }
            for nb in &self.neighbors[i] {
                let j = self.index[nb];
                if dist[j] == usize::MAX {
                    dist[j] = dist[i] + 1;
                    queue.push_back(j);
                }
            }
        }
        None
    }

    /// A fewest-hop path from `from` to `to`, both included. Ties go to
    /// the lower node id at every step, so routes are deterministic.
    pub fn shortest_path(&self, from: NodeId, to: NodeId) -> Option<Vec<NodeId>> {
        let start = self.index_of(from).ok()?;
        let goal = self.index_of(to).ok()?;
        let mut prev = vec![usize::MAX; self.ids.len()];
        let mut queue = VecDeque::from([start]);
        prev[start] = start;
        while let Some(i) = queue.pop_front() {
            if i == goal {
                let mut path = vec![self.ids[i]];
                let mut k = i;
                while k != start {
                    k = prev[k];
                    path.push(self.ids[k]);
                }
                path.reverse();
                return Some(path);
            }
            for nb in &self.neighbors[i] {
                let j = self.index[nb];
                if prev[j] == usize::MAX {
                    prev[j] = i;
                    queue.push_back(j);
                }
            }
        }
        None
    }

    /// Connected component label of every node, in `node_ids()` order.
    /// Labels number components by their lowest node.
    pub fn components(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.ids.len()];
        let mut next = 0;
        for s in 0..self.ids.len() {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = next;
            let mut queue = VecDeque::from([s]);
            while let Some(i) = queue.pop_front() {
                for nb in &self.neighbors[i] {
                    let j = self.index[nb];
                    if label[j] == usize::MAX {
                        label[j] = next;
                        queue.push_back(j);
                    }
                }
            }
            next += 1;
        }
        label
    }

    /// Most node-disjoint pairs that can be drawn inside components.
    pub fn max_disjoint_pairs(&self) -> usize {
        let labels = self.components();
        let mut sizes = vec![0usize; labels.iter().max().map_or(0, |m| m + 1)];
        for l in labels {
            sizes[l] += 1;
        }
        sizes.iter().map(|s| s / 2).sum()
    }
}

/// Protocol-model interference between two directed links.
///
/// Links sharing an endpoint always conflict (one half-duplex transceiver
/// per node). Otherwise they conflict only on the same channel, when the
/// receiver of one neighbors the transmitter of the other.
pub fn links_conflict(l1: Link, l2: Link, same_channel: bool, g: &CommunicationGraph) -> bool {
    if l1.shares_node(&l2) {
        return true;
    }
    same_channel && (g.are_neighbors(l1.rx, l2.tx) || g.are_neighbors(l1.tx, l2.rx))
}

/// Conflict graph over undirected links. Two vertices are joined when some
/// orientation of the pair conflicts on a shared channel.
#[derive(Debug, Clone)]
pub struct ConflictGraph {
    pub vertices: Vec<Link>,
    pub edges: BTreeSet<(usize, usize)>,
}

impl ConflictGraph {
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }
}

pub fn build_conflict_graph(g: &CommunicationGraph) -> ConflictGraph {
    let vertices = g.undirected_links();
    let mut edges = BTreeSet::new();
    for i in 0..vertices.len() {
        for j in (i + 1)..vertices.len() {
            let (a, b) = (vertices[i], vertices[j]);
            let conflict = [a, a.reversed()]
                .iter()
                .any(|&x| [b, b.reversed()].iter().any(|&y| links_conflict(x, y, true, g)));
            if conflict {
                edges.insert((i, j));
            }
        }
    }
    ConflictGraph { vertices, edges }
}

/// Uniform placement in `[0, width] x [0, height]`, ids `0..n`.
pub fn random_positions<R: Rng>(n: usize, width: f64, height: f64, rng: &mut R) -> Vec<(NodeId, Position)> {
    (0..n)
        .map(|i| {
            let x = rng.gen_range(0.0..=width);
            let y = rng.gen_range(0.0..=height);
            (NodeId(i as u32), Position::new(x, y))
        })
        .collect()
}

/// Parses a position table: one `id x y` triple per line. Blank lines and
/// lines starting with `#` are ignored.
pub fn parse_positions(text: &str, origin: &str) -> Result<Vec<(NodeId, Position)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(format!("expected `id x y`, found {} fields", fields.len())));
        }
        let id: u32 = fields[0].parse().map_err(|e| err(format!("bad node id: {e}")))?;
        let x: f64 = fields[1].parse().map_err(|e| err(format!("bad x: {e}")))?;
        let y: f64 = fields[2].parse().map_err(|e| err(format!("bad y: {e}")))?;
        out.push((NodeId(id), Position::new(x, y)));
    }
    Ok(out)
}

pub fn read_positions(path: &Path) -> Result<Vec<(NodeId, Position)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_positions(&text, &path.display().to_string())
}
