//! Licensed channels, primary-user ON/OFF activity and per-frame sensing.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::topology::{NodeId, Position};

/// Channel 0 is the dedicated control channel, `1..=C` are licensed data channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChannelId(pub u8);

impl ChannelId {
    pub const CONTROL: ChannelId = ChannelId(0);

    pub fn is_control(self) -> bool {
        self == Self::CONTROL
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSpec {
    pub id: ChannelId,
    pub rate_bps: f64,
    pub packets_per_slot: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub control_rate: f64,
    pub data_rates: Vec<f64>,
    /// Packets per slot for each data channel; derived from the rate class
    /// when empty.
    pub packets_per_slot: Vec<u32>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let mut data_rates = vec![2e6; 3];
        data_rates.extend([5.5e6; 4]);
        data_rates.extend([11e6; 4]);
        ChannelConfig {
            control_rate: 2e6,
            data_rates,
            packets_per_slot: Vec::new(),
        }
    }
}

/// Consecutive packets a rate class fits in one slot.
pub fn packets_for_rate(rate_bps: f64) -> Option<u32> {
    match rate_bps {
        r if r == 2e6 => Some(1),
        r if r == 5.5e6 => Some(3),
        r if r == 11e6 => Some(5),
        _ => None,
    }
}

/// Per-channel capacity `B_c` and packets per slot, indexed by channel id.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTable {
    channels: Vec<ChannelSpec>,
}

impl Default for ChannelTable {
    fn default() -> Self {
        ChannelTable::from_config(&ChannelConfig::default()).expect("default channel config is valid")
    }
}

impl ChannelTable {
    pub fn from_config(cfg: &ChannelConfig) -> Result<Self> {
        if cfg.data_rates.is_empty() {
            return Err(Error::validation("channels.data_rates", "at least one data channel required"));
        }
        if cfg.data_rates.len() > 254 {
            return Err(Error::validation("channels.data_rates", "at most 254 data channels"));
        }
        if !cfg.packets_per_slot.is_empty() && cfg.packets_per_slot.len() != cfg.data_rates.len() {
            return Err(Error::validation(
                "channels.packets_per_slot",
                "must list one entry per data channel",
            ));
        }
        let class = |rate: f64, field: &'static str| -> Result<u32> {
            if !(rate > 0.0) {
                return Err(Error::validation(field, "rates must be positive"));
            }
            packets_for_rate(rate).ok_or_else(|| {
                Error::validation("channels.packets_per_slot", format!("no default rate class for {rate} bps"))
            })
        };
        let control_pps = class(cfg.control_rate, "channels.control_rate")?;
        let mut channels = vec![ChannelSpec {
            id: ChannelId::CONTROL,
            rate_bps: cfg.control_rate,
            packets_per_slot: control_pps,
        }];
        for (i, &rate) in cfg.data_rates.iter().enumerate() {
            let pps = match cfg.packets_per_slot.get(i) {
                Some(&0) => return Err(Error::validation("channels.packets_per_slot", "must be positive")),
                Some(&p) if rate > 0.0 => p,
                _ => class(rate, "channels.data_rates")?,
            };
            channels.push(ChannelSpec {
                id: ChannelId(i as u8 + 1),
                rate_bps: rate,
                packets_per_slot: pps,
            });
        }
        Ok(ChannelTable { channels })
    }

    /// Number of licensed data channels `C`.
    pub fn num_data_channels(&self) -> usize {
        self.channels.len() - 1
    }

    /// All channels, control first.
    pub fn channels(&self) -> &[ChannelSpec] {
        &self.channels
    }

    pub fn data_channels(&self) -> impl Iterator<Item = ChannelId> + '_ {
        self.channels[1..].iter().map(|c| c.id)
    }

    pub fn all_channel_ids(&self) -> BTreeSet<ChannelId> {
        self.channels.iter().map(|c| c.id).collect()
    }

    pub fn spec(&self, ch: ChannelId) -> Option<&ChannelSpec> {
        self.channels.get(ch.0 as usize)
    }

    pub fn rate(&self, ch: ChannelId) -> f64 {
        self.channels[ch.0 as usize].rate_bps
    }

    pub fn packets_per_slot(&self, ch: ChannelId) -> u32 {
        self.channels[ch.0 as usize].packets_per_slot
    }

    /// Segment capacity `B_c / |T|` in bits per second.
    pub fn segment_capacity(&self, ch: ChannelId, num_slots: usize) -> Result<f64> {
        if num_slots == 0 {
            return Err(Error::validation("frame.num_slots", "must be at least 1"));
        }
        let spec = self
            .spec(ch)
            .ok_or_else(|| Error::Contract(format!("channel {ch} not in table")))?;
        Ok(spec.rate_bps / num_slots as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PuPhase {
    On,
    Off,
}

/// Alternating renewal process with exponential ON and OFF holding times.
/// An infinite mean pins the process in that phase forever.
#[derive(Debug, Clone)]
pub struct OnOffProcess {
    initially_on: bool,
    on_dist: Option<Exp<f64>>,
    off_dist: Option<Exp<f64>>,
    toggles: Vec<f64>,
    rng: ChaCha8Rng,
}

impl OnOffProcess {
    pub fn new(mean_on: f64, mean_off: f64, mut rng: ChaCha8Rng) -> Result<Self> {
        if !(mean_on > 0.0) || !(mean_off > 0.0) {
            return Err(Error::validation("pu.mean_on", "holding-time means must be positive"));
        }
        if mean_on.is_infinite() && mean_off.is_infinite() {
            return Err(Error::validation("pu.mean_off", "ON and OFF means cannot both be infinite"));
        }
        let dist = |mean: f64| mean.is_finite().then(|| Exp::new(1.0 / mean).expect("positive rate"));
        let p_on = if mean_on.is_infinite() {
            1.0
        } else if mean_off.is_infinite() {
            0.0
        } else {
            mean_on / (mean_on + mean_off)
        };
        let initially_on = rng.gen_bool(p_on);
        Ok(OnOffProcess {
            initially_on,
            on_dist: dist(mean_on),
            off_dist: dist(mean_off),
            toggles: Vec::new(),
            rng,
        })
    }

    fn holding_time(&mut self, on: bool) -> f64 {
        let dist = if on { self.on_dist } else { self.off_dist };
        match dist {
            Some(d) => d.sample(&mut self.rng),
            None => f64::INFINITY,
        }
    }

    /// Phase at time `t` (seconds). Toggle times are generated lazily and
    /// memoized, so queries may come in any order.
    pub fn phase_at(&mut self, t: f64) -> PuPhase {
        assert!(t >= 0.0, "negative query time {t}");
        loop {
            let last = self.toggles.last().copied().unwrap_or(0.0);
            if last > t || last.is_infinite() {
                break;
            }
            let currently_on = self.initially_on ^ (self.toggles.len() % 2 == 1);
            let next = last + self.holding_time(currently_on);
            self.toggles.push(next);
        }
        let flips = self.toggles.partition_point(|&x| x <= t);
        if self.initially_on ^ (flips % 2 == 1) {
            PuPhase::On
        } else {
            PuPhase::Off
        }
    }
}

#[derive(Debug, Clone)]
pub struct PrimaryUser {
    pub position: Position,
    pub channel: ChannelId,
    pub coverage: f64,
    pub activity: OnOffProcess,
}

impl PrimaryUser {
    pub fn covers(&self, pos: &Position) -> bool {
        self.position.distance(pos) <= self.coverage
    }
}

pub fn pu_phase_at(pu: &mut PrimaryUser, t: f64) -> PuPhase {
    pu.activity.phase_at(t)
}

/// True iff some primary user on `channel` is ON at `t` and covers `pos`.
pub fn channel_busy_at(channel: ChannelId, pos: &Position, t: f64, pus: &mut [PrimaryUser]) -> Result<bool> {
    if channel.is_control() {
        return Err(Error::Contract("the control channel is always available".into()));
    }
    Ok(pus
        .iter_mut()
        .any(|pu| pu.channel == channel && pu.covers(pos) && pu.activity.phase_at(t) == PuPhase::On))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensingReport {
    pub node: NodeId,
    pub frame: u64,
    pub available: BTreeSet<ChannelId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PuConfig {
    /// Number of randomly placed PUs, used when `placements` is empty.
    pub count: usize,
    /// Explicit `[x, y, channel]` placements.
    pub placements: Vec<(f64, f64, u8)>,
    pub coverage: f64,
    pub mean_on: f64,
    pub mean_off: f64,
    /// Let PUs change phase inside a frame. Diagnostic only: sensing happens
    /// at frame start, so this produces PU interference by construction.
    pub midframe_toggle: bool,
}

impl Default for PuConfig {
    fn default() -> Self {
        PuConfig {
            count: 5,
            placements: Vec::new(),
            coverage: 300.0,
            mean_on: 1.0,
            mean_off: 1.0,
            midframe_toggle: false,
        }
    }
}

/// Ground-truth PU phases frozen at one instant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PuSnapshot {
    pub on: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct SpectrumModel {
    pub table: ChannelTable,
    pub pus: Vec<PrimaryUser>,
}

impl SpectrumModel {
    pub fn new(table: ChannelTable, pus: Vec<PrimaryUser>) -> Self {
        SpectrumModel { table, pus }
    }

    /// Places PUs from the config. Random placements draw from the PU
    /// substream; each PU's activity gets a stream of its own.
    pub fn from_config(
        cfg: &PuConfig,
        table: ChannelTable,
        area: (f64, f64),
        seed: u64,
        topology_id: u32,
    ) -> Result<Self> {
        if !(cfg.coverage > 0.0) {
            return Err(Error::validation("pu.coverage", "must be positive"));
        }
        let c = table.num_data_channels() as u8;
        let mut placement_rng = stream_rng(seed, topology_id, Stream::PrimaryUsers);
        let spots: Vec<(Position, ChannelId)> = if cfg.placements.is_empty() {
            (0..cfg.count)
                .map(|_| {
                    let x = placement_rng.gen_range(0.0..=area.0);
                    let y = placement_rng.gen_range(0.0..=area.1);
                    let ch = placement_rng.gen_range(1..=c);
                    (Position::new(x, y), ChannelId(ch))
                })
                .collect()
        } else {
            cfg.placements
                .iter()
                .map(|&(x, y, ch)| {
                    if ch == 0 || ch > c {
                        Err(Error::validation("pu.placements", format!("channel {ch} is not a data channel")))
                    } else {
                        Ok((Position::new(x, y), ChannelId(ch)))
                    }
                })
                .collect::<Result<_>>()?
        };
        let pus = spots
            .into_iter()
            .enumerate()
            .map(|(i, (position, channel))| {
                let rng = stream_rng(seed, topology_id, Stream::PuActivity(i as u32));
                Ok(PrimaryUser {
                    position,
                    channel,
                    coverage: cfg.coverage,
                    activity: OnOffProcess::new(cfg.mean_on, cfg.mean_off, rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SpectrumModel { table, pus })
    }

    pub fn snapshot(&mut self, t: f64) -> PuSnapshot {
        PuSnapshot {
            on: self.pus.iter_mut().map(|pu| pu.activity.phase_at(t) == PuPhase::On).collect(),
        }
    }

    /// Whether `channel` is busy at `pos` under a frozen snapshot.
    pub fn busy_in(&self, snapshot: &PuSnapshot, channel: ChannelId, pos: &Position) -> bool {
        !channel.is_control()
            && self
                .pus
                .iter()
                .zip(&snapshot.on)
                .any(|(pu, &on)| on && pu.channel == channel && pu.covers(pos))
    }

    pub fn channel_busy_at(&mut self, channel: ChannelId, pos: &Position, t: f64) -> Result<bool> {
        channel_busy_at(channel, pos, t, &mut self.pus)
    }

    /// Perfect sensing: every data channel not busy at the node plus the
    /// control channel.
    pub fn sense(&self, node: NodeId, pos: &Position, frame: u64, snapshot: &PuSnapshot) -> SensingReport {
        let mut available = BTreeSet::from([ChannelId::CONTROL]);
        available.extend(self.table.data_channels().filter(|&ch| !self.busy_in(snapshot, ch, pos)));
        SensingReport { node, frame, available }
    }
}
