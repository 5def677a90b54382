//! Event loop, scenario assembly, traffic and metrics.

pub mod crmac;
pub mod metrics;
pub mod queue;
pub mod scenario;
pub mod traffic;

use crate::error::Result;
use crate::mac::AuditReport;
use crate::schedule::FrameSchedule;
use crate::trace::TraceRecord;

pub use metrics::{compute_metrics, Counters, Metrics};
pub use queue::EventQueue;
pub use scenario::{build_network, Network, Protocol, Scenario};
pub use traffic::{generate_traffic, select_flows, CbrSource, Flow, PacketArrival, TrafficConfig, TrafficMode};

/// Diagnostics collected on request; none of them change the simulation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub trace: bool,
    /// Keep every frame's schedule and negotiation outcome.
    pub record_frames: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameLog {
    pub frame: u64,
    pub schedule: FrameSchedule,
    pub atim_collisions: u32,
    /// Scheduled exchanges whose ACK was lost.
    pub data_failures: u32,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub protocol: Protocol,
    pub metrics: Metrics,
    pub counters: Counters,
    pub audit: AuditReport,
    pub frames: Vec<FrameLog>,
    pub trace: Vec<TraceRecord>,
}

pub fn run_scenario(s: &Scenario) -> Result<RunOutput> {
    run_scenario_with(s, RunOptions::default())
}

pub fn run_scenario_with(s: &Scenario, opts: RunOptions) -> Result<RunOutput> {
    s.validate()?;
    match s.protocol {
        Protocol::Crmac => crmac::run(s, opts),
        Protocol::Baseline => crate::baseline::run_baseline_scenario(s, opts),
    }
}
