//! Flow selection, static routes, and constant-bit-rate packet sources.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::time::SimTime;
use crate::topology::{CommunicationGraph, Link, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficMode {
    /// Every flow offers `packet_rate` packets per second.
    Cbr,
    /// Every flow offers its session rate `r(z)`.
    Demand,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    pub packet_bytes: u32,
    pub packet_rate: f64,
    pub mode: TrafficMode,
    /// Session rates are uniform in `[demand_min, demand_max]` times the
    /// reference rate.
    pub demand_min: f64,
    pub demand_max: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            packet_bytes: 1000,
            packet_rate: 4.0,
            mode: TrafficMode::Cbr,
            demand_min: 0.1,
            demand_max: 0.6,
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<()> {
        if self.packet_bytes == 0 {
            return Err(Error::validation("traffic.packet_bytes", "must be positive"));
        }
        if !(self.packet_rate.is_finite() && self.packet_rate > 0.0) {
            return Err(Error::validation("traffic.packet_rate", "must be positive"));
        }
        if !(self.demand_min > 0.0 && self.demand_min <= self.demand_max && self.demand_max.is_finite()) {
            return Err(Error::validation("traffic.demand_min", "need 0 < demand_min <= demand_max"));
        }
        Ok(())
    }

    pub fn packet_bits(&self) -> u64 {
        u64::from(self.packet_bytes) * 8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub id: u32,
    pub src: NodeId,
    pub dst: NodeId,
    /// Fewest-hop path, `src` first and `dst` last.
    pub route: Vec<NodeId>,
    /// Session rate `r(z)`, bits per second.
    pub session_rate: f64,
    /// Offered load, packets per second.
    pub packet_rate: f64,
    /// First arrival, seconds.
    pub start: f64,
}

impl Flow {
    pub fn hops(&self) -> impl Iterator<Item = Link> + '_ {
        self.route.windows(2).map(|w| Link::new(w[0], w[1]))
    }
}

fn draw_flow<R: Rng>(id: u32, route: Vec<NodeId>, cfg: &TrafficConfig, reference_rate: f64, rng: &mut R) -> Flow {
    let session_rate = rng.gen_range(cfg.demand_min..=cfg.demand_max) * reference_rate;
    let packet_rate = match cfg.mode {
        TrafficMode::Cbr => cfg.packet_rate,
        TrafficMode::Demand => session_rate / cfg.packet_bits() as f64,
    };
    let start = rng.gen_range(0.0..1.0) / packet_rate;
    Flow {
        id,
        src: route[0],
        dst: route[route.len() - 1],
        route,
        session_rate,
        packet_rate,
        start,
    }
}

/// Picks `count` flows between node-disjoint source/destination pairs,
/// each routed over a fewest-hop path.
///
/// Nodes are shuffled and paired greedily with the next unused node of the
/// same connected component. Every pair gets its parameters drawn before
/// the first `count` are taken, so a run with fewer flows sees a prefix of
/// the flows of a run with more.
pub fn select_flows<R: Rng>(
    g: &CommunicationGraph,
    count: usize,
    cfg: &TrafficConfig,
    reference_rate: f64,
    rng: &mut R,
) -> Result<Vec<Flow>> {
    let ids = g.node_ids();
    let labels = g.components();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(rng);
    let mut used = vec![false; ids.len()];
    let mut pairs = Vec::new();
    for a in 0..order.len() {
        let u = order[a];
        if used[u] {
            continue;
        }
        if let Some(&v) = order[a + 1..].iter().find(|&&v| !used[v] && labels[v] == labels[u]) {
            used[u] = true;
            used[v] = true;
            pairs.push((ids[u], ids[v]));
        }
    }
    if count > pairs.len() {
        return Err(Error::Config(format!(
            "{count} flows requested but the topology has only {} disjoint connected pairs",
            pairs.len()
        )));
    }
    let flows = pairs
        .into_iter()
        .enumerate()
        .map(|(i, (src, dst))| {
            let route = g.shortest_path(src, dst).expect("pair drawn inside one component");
            draw_flow(i as u32, route, cfg, reference_rate, rng)
        })
        .collect::<Vec<_>>();
    Ok(flows.into_iter().take(count).collect())
}

/// Flows on explicitly listed pairs, which must be disjoint and connected.
pub fn flows_from_pairs<R: Rng>(
    g: &CommunicationGraph,
    pairs: &[(NodeId, NodeId)],
    cfg: &TrafficConfig,
    reference_rate: f64,
    rng: &mut R,
) -> Result<Vec<Flow>> {
    let mut used = BTreeSet::new();
    pairs
        .iter()
        .enumerate()
        .map(|(i, &(src, dst))| {
            if src == dst {
                return Err(Error::Config(format!("flow {i}: source and destination are both {src}")));
            }
            if !used.insert(src) || !used.insert(dst) {
                return Err(Error::Config(format!("flow {i}: pairs must be node-disjoint")));
            }
            let route = g
                .shortest_path(src, dst)
                .ok_or_else(|| Error::Config(format!("flow {i}: no path from {src} to {dst}")))?;
            Ok(draw_flow(i as u32, route, cfg, reference_rate, rng))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct PacketArrival {
    pub time: SimTime,
    pub flow: u32,
    pub seq: u64,
}

/// Periodic arrivals of one flow, produced lazily.
#[derive(Debug, Clone)]
pub struct CbrSource {
    flow: u32,
    start: f64,
    interval: f64,
    end: f64,
    next: u64,
}

impl CbrSource {
    pub fn new(flow: &Flow, duration: f64) -> Self {
        CbrSource {
            flow: flow.id,
            start: flow.start,
            interval: 1.0 / flow.packet_rate,
            end: duration,
            next: 0,
        }
    }
}

impl Iterator for CbrSource {
    type Item = PacketArrival;

    fn next(&mut self) -> Option<PacketArrival> {
        let t = self.start + self.next as f64 * self.interval;
        if t >= self.end {
            return None;
        }
        let a = PacketArrival {
            time: SimTime::from_secs(t),
            flow: self.flow,
            seq: self.next,
        };
        self.next += 1;
        Some(a)
    }
}

/// Every arrival of every flow before `duration`, in time order.
pub fn generate_traffic(flows: &[Flow], duration: f64) -> Result<Vec<PacketArrival>> {
    let mut used = BTreeSet::new();
    for f in flows {
        if f.src == f.dst {
            return Err(Error::Config(format!("flow {}: source equals destination", f.id)));
        }
        if !used.insert(f.src) || !used.insert(f.dst) {
            return Err(Error::Config(format!("flow {}: pairs must be node-disjoint", f.id)));
        }
    }
    let mut out: Vec<PacketArrival> = flows.iter().flat_map(|f| CbrSource::new(f, duration)).collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flow(id: u32, src: u32, dst: u32) -> Flow {
        Flow {
            id,
            src: NodeId(src),
            dst: NodeId(dst),
            route: vec![NodeId(src), NodeId(dst)],
            session_rate: 2e5,
            packet_rate: 4.0,
            start: 0.1,
        }
    }

    #[test]
    fn one_flow_ten_seconds() {
        assert_eq!(generate_traffic(&[flow(0, 0, 1)], 10.0).unwrap().len(), 40);
    }

    #[test]
    fn no_flows_no_arrivals() {
        assert!(generate_traffic(&[], 10.0).unwrap().is_empty());
    }

    #[test]
    fn twenty_four_flows() {
        let flows: Vec<_> = (0..24).map(|i| flow(i, 2 * i, 2 * i + 1)).collect();
        assert_eq!(generate_traffic(&flows, 500.0).unwrap().len(), 48_000);
    }

    #[test]
    fn shared_node_rejected() {
        assert!(matches!(generate_traffic(&[flow(0, 0, 1), flow(1, 1, 2)], 1.0), Err(Error::Config(_))));
        assert!(matches!(generate_traffic(&[flow(0, 3, 3)], 1.0), Err(Error::Config(_))));
    }
}
