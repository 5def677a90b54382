//! Line-oriented event trace.
//!
//! Each record renders as space-separated `key=value` fields, always in the
//! order `t frame node ev ch slot peer`, followed by event-specific extras:
//!
//! ```text
//! t=0.002450 frame=0 node=3 ev=atim ch=0 slot=- peer=4 free=212
//! ```
//!
//! Absent values print as `-`.

use std::fmt::{self, Write as _};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::spectrum::ChannelId;
use crate::time::SimTime;
use crate::topology::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: SimTime,
    pub frame: Option<u64>,
    pub node: NodeId,
    pub ev: &'static str,
    pub ch: Option<ChannelId>,
    pub slot: Option<u16>,
    pub peer: Option<NodeId>,
    pub extra: String,
}

impl TraceRecord {
    pub fn new(t: SimTime, node: NodeId, ev: &'static str) -> Self {
        TraceRecord {
            t,
            frame: None,
            node,
            ev,
            ch: None,
            slot: None,
            peer: None,
            extra: String::new(),
        }
    }

    pub fn frame(mut self, frame: u64) -> Self {
        self.frame = Some(frame);
        self
    }

    pub fn ch(mut self, ch: ChannelId) -> Self {
        self.ch = Some(ch);
        self
    }

    pub fn slot(mut self, slot: u16) -> Self {
        self.slot = Some(slot);
        self
    }

    pub fn peer(mut self, peer: NodeId) -> Self {
        self.peer = Some(peer);
        self
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        let _ = write!(self.extra, " {key}={value}");
        self
    }
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "-".to_string(), |v| v.to_string())
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} frame={} node={} ev={} ch={} slot={} peer={}{}",
            self.t,
            opt(&self.frame),
            self.node,
            self.ev,
            opt(&self.ch),
            opt(&self.slot),
            opt(&self.peer),
            self.extra
        )
    }
}

/// Collects records when enabled; a disabled trace never builds them.
#[derive(Debug, Default)]
pub struct Trace {
    records: Option<Vec<TraceRecord>>,
}

impl Trace {
    pub fn enabled() -> Self {
        Trace {
            records: Some(Vec::new()),
        }
    }

    pub fn disabled() -> Self {
        Trace { records: None }
    }

    pub fn is_enabled(&self) -> bool {
        self.records.is_some()
    }

    pub fn emit(&mut self, record: impl FnOnce() -> TraceRecord) {
        if let Some(records) = &mut self.records {
            records.push(record());
        }
    }

    pub fn records(&self) -> &[TraceRecord] {
        self.records.as_deref().unwrap_or(&[])
    }

    pub fn into_records(self) -> Vec<TraceRecord> {
        self.records.unwrap_or_default()
    }
}

pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for r in records {
        writeln!(out, "{r}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_format() {
        let r = TraceRecord::new(SimTime::from_secs(0.00245), NodeId(3), "atim")
            .frame(0)
            .ch(ChannelId::CONTROL)
            .peer(NodeId(4))
            .with("free", 212);
        assert_eq!(r.to_string(), "t=0.002450 frame=0 node=3 ev=atim ch=0 slot=- peer=4 free=212");
    }

    #[test]
    fn disabled_trace_skips_construction() {
        let mut t = Trace::disabled();
        t.emit(|| unreachable!());
        assert!(t.records().is_empty());
    }
}
