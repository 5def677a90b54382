//! Simulator for a multichannel cognitive-radio MAC that negotiates
//! `(channel, timeslot)` segments in an ATIM window and transmits in a
//! TDMA communication window, with an 802.11 DCF baseline for comparison.
//!
//! The usual entry points are [`engine::run_scenario`] for a single run
//! and [`sweep::run_sweep`] for parameter sweeps; [`config::parse_config`]
//! reads scenario files.

pub mod baseline;
pub mod config;
pub mod engine;
pub mod error;
pub mod mac;
pub mod rng;
pub mod schedule;
pub mod segments;
pub mod spectrum;
pub mod sweep;
pub mod time;
pub mod topology;
pub mod trace;

pub use engine::{run_scenario, Metrics, Protocol, Scenario};
pub use error::{Error, Result};
