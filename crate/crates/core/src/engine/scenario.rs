//! Scenario description and network assembly.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Deserialize;

use crate::baseline::BaselineConfig;
use crate::engine::traffic::{flows_from_pairs, select_flows, Flow, TrafficConfig};
use crate::error::{Error, Result};
use crate::mac::{FrameConfig, MacConfig};
use crate::rng::{stream_rng, topology_rng, Stream};
use crate::spectrum::{ChannelConfig, ChannelTable, PuConfig};
use crate::topology::{build_communication_graph, random_positions, read_positions, CommunicationGraph, NodeId, Position, RadioProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Crmac,
    Baseline,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Crmac => "crmac",
            Protocol::Baseline => "baseline",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crmac" => Ok(Protocol::Crmac),
            "baseline" => Ok(Protocol::Baseline),
            other => Err(Error::Config(format!("unknown protocol `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub topology_id: u32,
    pub nodes: usize,
    pub area_width: f64,
    pub area_height: f64,
    /// Simulated seconds.
    pub duration: f64,
    pub warmup: f64,
    /// Exclude packets generated during warmup from every metric.
    pub warmup_cut: bool,
    pub protocol: Protocol,
    pub flows: usize,
    /// Random topologies are redrawn until this many disjoint connected
    /// source/destination pairs fit.
    pub min_pairs: usize,
    /// `id x y` per line; replaces random placement.
    pub positions_file: Option<PathBuf>,
    #[serde(skip)]
    pub positions: Option<Vec<(NodeId, Position)>>,
    /// Explicit `[src, dst]` flows; replaces random flow selection.
    pub flow_pairs: Vec<(u32, u32)>,
    /// Seconds between trace statistics records.
    pub stats_interval: f64,
    pub radio: RadioProfile,
    pub channels: ChannelConfig,
    pub pu: PuConfig,
    pub frame: FrameConfig,
    pub mac: MacConfig,
    pub traffic: TrafficConfig,
    pub baseline: BaselineConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 1,
            topology_id: 0,
            nodes: 50,
            area_width: 1000.0,
            area_height: 750.0,
            duration: 500.0,
            warmup: 10.0,
            warmup_cut: true,
            protocol: Protocol::Crmac,
            flows: 12,
            min_pairs: 24,
            positions_file: None,
            positions: None,
            flow_pairs: Vec::new(),
            stats_interval: 1.0,
            radio: RadioProfile::default(),
            channels: ChannelConfig::default(),
            pu: PuConfig::default(),
            frame: FrameConfig::default(),
            mac: MacConfig::default(),
            traffic: TrafficConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

const MAX_TOPOLOGY_DRAWS: usize = 10_000;

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::validation("nodes", "need at least 2 nodes"));
        }
        if !(self.area_width > 0.0 && self.area_width.is_finite()) {
            return Err(Error::validation("area_width", "must be positive"));
        }
        if !(self.area_height > 0.0 && self.area_height.is_finite()) {
            return Err(Error::validation("area_height", "must be positive"));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::validation("duration", "must be a non-negative number of seconds"));
        }
        if !(self.warmup >= 0.0 && self.warmup.is_finite()) {
            return Err(Error::validation("warmup", "must be non-negative"));
        }
        if !(self.stats_interval > 0.0) {
            return Err(Error::validation("stats_interval", "must be positive"));
        }
        if self.flows > self.nodes / 2 {
            return Err(Error::validation(
                "flows",
                format!("{} disjoint flows cannot fit on {} nodes", self.flows, self.nodes),
            ));
        }
        self.radio.validate()?;
        ChannelTable::from_config(&self.channels)?;
        self.frame.validate()?;
        self.mac.validate()?;
        self.traffic.validate()?;
        self.baseline.validate()?;
        if !(self.pu.coverage > 0.0) {
            return Err(Error::validation("pu.coverage", "must be positive"));
        }
        if !(self.pu.mean_on > 0.0 && self.pu.mean_off > 0.0) {
            return Err(Error::validation("pu.mean_on", "holding times must be positive"));
        }
        Ok(())
    }

    /// Seconds over which throughput is averaged.
    pub fn measured_window(&self) -> f64 {
        if self.warmup_cut {
            (self.duration - self.warmup).max(0.0)
        } else {
            self.duration
        }
    }

    /// Bits per second of demand that one queued packet adds: the capacity
    /// of one reference-rate segment.
    pub fn demand_per_packet(&self) -> f64 {
        self.mac.reference_rate / self.frame.num_slots as f64
    }
}

/// Placement, graph and flows of one scenario.
#[derive(Debug, Clone)]
pub struct Network {
    pub graph: CommunicationGraph,
    pub flows: Vec<Flow>,
}

fn graph_for(placed: &[(NodeId, Position)], s: &Scenario, channels: &ChannelTable) -> Result<CommunicationGraph> {
    let all = channels.all_channel_ids();
    let lists: BTreeMap<_, _> = placed.iter().map(|(v, _)| (*v, all.clone())).collect();
    build_communication_graph(placed, s.radio, &lists)
}

/// Builds the topology and picks flows. Random placement depends only on
/// the topology id; flow choice and rates depend on the seed too.
pub fn build_network(s: &Scenario) -> Result<Network> {
    let channels = ChannelTable::from_config(&s.channels)?;
    let fixed = match (&s.positions, &s.positions_file) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(path)) => Some(read_positions(path)?),
        (None, None) => None,
    };
    let graph = match fixed {
        Some(placed) => graph_for(&placed, s, &channels)?,
        None => {
            let mut rng = topology_rng(s.topology_id);
            let mut found = None;
            for _ in 0..MAX_TOPOLOGY_DRAWS {
                let placed = random_positions(s.nodes, s.area_width, s.area_height, &mut rng);
                let g = graph_for(&placed, s, &channels)?;
                if g.max_disjoint_pairs() >= s.min_pairs {
                    found = Some(g);
                    break;
                }
            }
            found.ok_or_else(|| {
                Error::Config(format!(
                    "no placement of {} nodes in {}x{} m yields {} disjoint connected pairs",
                    s.nodes, s.area_width, s.area_height, s.min_pairs
                ))
            })?
        }
    };
    let mut rng = stream_rng(s.seed, s.topology_id, Stream::Flows);
    let flows = if s.flow_pairs.is_empty() {
        select_flows(&graph, s.flows, &s.traffic, s.mac.reference_rate, &mut rng)?
    } else {
        let pairs: Vec<_> = s.flow_pairs.iter().map(|&(a, b)| (NodeId(a), NodeId(b))).collect();
        flows_from_pairs(&graph, &pairs, &s.traffic, s.mac.reference_rate, &mut rng)?
    };
    Ok(Network { graph, flows })
}
