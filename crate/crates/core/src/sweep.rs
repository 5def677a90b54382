//! Parameter sweeps and the results CSV.
//!
//! Columns, in order:
//!
//! ```text
//! protocol,seed,topology_id,num_flows,throughput_bps,normalized_throughput,
//! mean_delay_s,pdr,generated,delivered,dropped,doze_fraction,summary
//! ```
//!
//! `summary` is `run` for one simulation, or `mean` / `stddev` (sample)
//! over all runs of one protocol and flow count; summary rows leave `seed`
//! and `topology_id` empty. Undefined values (no packets generated, no
//! baseline to normalize by) are empty fields. Lines starting with `#`
//! are comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::engine::{run_scenario_with, Protocol, RunOptions, RunOutput, Scenario};
use crate::error::{Error, Result};
use crate::trace::write_trace;

pub const CSV_COLUMNS: [&str; 13] = [
    "protocol",
    "seed",
    "topology_id",
    "num_flows",
    "throughput_bps",
    "normalized_throughput",
    "mean_delay_s",
    "pdr",
    "generated",
    "delivered",
    "dropped",
    "doze_fraction",
    "summary",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Summary {
    Run,
    Mean,
    Stddev,
}

impl Summary {
    pub fn as_str(self) -> &'static str {
        match self {
            Summary::Run => "run",
            Summary::Mean => "mean",
            Summary::Stddev => "stddev",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub protocol: Protocol,
    pub seed: Option<u64>,
    pub topology_id: Option<u32>,
    pub num_flows: usize,
    pub throughput_bps: f64,
    pub normalized_throughput: Option<f64>,
    pub mean_delay_s: Option<f64>,
    pub pdr: Option<f64>,
    /// Whole packets for runs; means and deviations for summary rows.
    pub generated: f64,
    pub delivered: f64,
    pub dropped: f64,
    pub doze_fraction: Option<f64>,
    pub summary: Summary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RunKey {
    pub protocol: Protocol,
    pub num_flows: usize,
    pub topology_id: u32,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub base: Scenario,
    pub protocols: Vec<Protocol>,
    pub flows: Vec<usize>,
    /// Seeds `base.seed .. base.seed + seeds`.
    pub seeds: u64,
    /// Topologies `base.topology_id .. base.topology_id + topologies`.
    pub topologies: u32,
    /// One trace file per run goes here when set.
    pub trace_dir: Option<PathBuf>,
}

impl SweepConfig {
    pub fn new(base: Scenario) -> Self {
        SweepConfig {
            protocols: vec![Protocol::Crmac, Protocol::Baseline],
            flows: vec![base.flows],
            seeds: 1,
            topologies: 1,
            trace_dir: None,
            base,
        }
    }

    pub fn keys(&self) -> Vec<RunKey> {
        let mut keys = Vec::new();
        for &protocol in &self.protocols {
            for &num_flows in &self.flows {
                for t in 0..self.topologies {
                    for k in 0..self.seeds {
                        keys.push(RunKey {
                            protocol,
                            num_flows,
                            topology_id: self.base.topology_id + t,
                            seed: self.base.seed + k,
                        });
                    }
                }
            }
        }
        keys.sort();
        keys.dedup();
        keys
    }

    pub fn scenario(&self, key: &RunKey) -> Scenario {
        Scenario {
            protocol: key.protocol,
            flows: key.num_flows,
            topology_id: key.topology_id,
            seed: key.seed,
            ..self.base.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    /// Run rows in key order, then summary rows.
    pub records: Vec<RunRecord>,
    /// Every run's full output, trace excluded, in key order.
    pub runs: Vec<(RunKey, RunOutput)>,
}

pub fn trace_file_name(key: &RunKey) -> String {
    format!("{}_f{}_t{}_s{}.trace", key.protocol, key.num_flows, key.topology_id, key.seed)
}

/// Runs every (protocol, flows, topology, seed) combination in parallel.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutput> {
    for &flows in &cfg.flows {
        Scenario {
            flows,
            ..cfg.base.clone()
        }
        .validate()?;
    }
    if let Some(dir) = &cfg.trace_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let opts = RunOptions {
        trace: cfg.trace_dir.is_some(),
        record_frames: false,
    };
    let runs: Vec<(RunKey, RunOutput)> = cfg
        .keys()
        .into_par_iter()
        .map(|key| {
            let mut out = run_scenario_with(&cfg.scenario(&key), opts)?;
            if let Some(dir) = &cfg.trace_dir {
                write_trace(&dir.join(trace_file_name(&key)), &out.trace)?;
                out.trace = Vec::new();
            }
            Ok((key, out))
        })
        .collect::<Result<_>>()?;
    let records = records_for(&runs);
    Ok(SweepOutput { records, runs })
}

/// Run rows normalized against the baseline run with the same flows,
/// topology and seed, followed by per-(protocol, flows) summaries.
pub fn records_for(runs: &[(RunKey, RunOutput)]) -> Vec<RunRecord> {
    let baseline: BTreeMap<(usize, u32, u64), f64> = runs
        .iter()
        .filter(|(k, _)| k.protocol == Protocol::Baseline)
        .map(|(k, o)| ((k.num_flows, k.topology_id, k.seed), o.metrics.throughput_bps))
        .collect();
    let mut rows: Vec<RunRecord> = runs
        .iter()
        .map(|(k, o)| {
            let m = &o.metrics;
            let base = baseline.get(&(k.num_flows, k.topology_id, k.seed)).copied();
            RunRecord {
                protocol: k.protocol,
                seed: Some(k.seed),
                topology_id: Some(k.topology_id),
                num_flows: k.num_flows,
                throughput_bps: m.throughput_bps,
                normalized_throughput: base.filter(|&b| b > 0.0).map(|b| m.throughput_bps / b),
                mean_delay_s: m.mean_delay_s,
                pdr: m.pdr,
                generated: m.generated as f64,
                delivered: m.delivered as f64,
                dropped: m.dropped as f64,
                doze_fraction: m.doze_fraction,
                summary: Summary::Run,
            }
        })
        .collect();

    let mut groups: BTreeMap<(Protocol, usize), Vec<&RunRecord>> = BTreeMap::new();
    for r in &rows {
        groups.entry((r.protocol, r.num_flows)).or_default().push(r);
    }
    let mut summaries = Vec::new();
    for ((protocol, num_flows), rs) in groups {
        let col = |f: &dyn Fn(&RunRecord) -> Option<f64>| -> Vec<f64> { rs.iter().filter_map(|r| f(r)).collect() };
        let cols = [
            col(&|r| Some(r.throughput_bps)),
            col(&|r| r.normalized_throughput),
            col(&|r| r.mean_delay_s),
            col(&|r| r.pdr),
            col(&|r| Some(r.generated)),
            col(&|r| Some(r.delivered)),
            col(&|r| Some(r.dropped)),
            col(&|r| r.doze_fraction),
        ];
        for (summary, stat) in [(Summary::Mean, mean as fn(&[f64]) -> Option<f64>), (Summary::Stddev, sample_stddev)] {
            let v: Vec<Option<f64>> = cols.iter().map(|c| stat(c)).collect();
            summaries.push(RunRecord {
                protocol,
                seed: None,
                topology_id: None,
                num_flows,
                throughput_bps: v[0].unwrap_or(f64::NAN),
                normalized_throughput: v[1],
                mean_delay_s: v[2],
                pdr: v[3],
                generated: v[4].unwrap_or(f64::NAN),
                delivered: v[5].unwrap_or(f64::NAN),
                dropped: v[6].unwrap_or(f64::NAN),
                doze_fraction: v[7],
                summary,
            });
        }
    }
    rows.extend(summaries);
    rows
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sample standard deviation; undefined below two values.
pub fn sample_stddev(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

fn num(out: &mut String, v: Option<f64>) {
    if let Some(v) = v.filter(|v| v.is_finite()) {
        let _ = write!(out, "{v}");
    }
}

pub fn csv_row(r: &RunRecord) -> String {
    let mut s = String::new();
    let _ = write!(s, "{},", r.protocol);
    if let Some(seed) = r.seed {
        let _ = write!(s, "{seed}");
    }
    s.push(',');
    if let Some(t) = r.topology_id {
        let _ = write!(s, "{t}");
    }
    let _ = write!(s, ",{},", r.num_flows);
    num(&mut s, Some(r.throughput_bps));
    s.push(',');
    num(&mut s, r.normalized_throughput);
    s.push(',');
    num(&mut s, r.mean_delay_s);
    s.push(',');
    num(&mut s, r.pdr);
    for v in [r.generated, r.delivered, r.dropped] {
        s.push(',');
        num(&mut s, Some(v));
    }
    s.push(',');
    num(&mut s, r.doze_fraction);
    let _ = write!(s, ",{}", r.summary.as_str());
    s
}

/// Writes the CSV. Without `reproducible` the first line is a comment
/// carrying the generation time.
pub fn write_csv<W: Write>(mut w: W, records: &[RunRecord], reproducible: bool) -> std::io::Result<()> {
    if !reproducible {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        writeln!(w, "# generated by crmac {} at unix time {secs}", env!("CARGO_PKG_VERSION"))?;
    }
    writeln!(w, "{}", CSV_COLUMNS.join(","))?;
    for r in records {
        writeln!(w, "{}", csv_row(r))?;
    }
    w.flush()
}

pub fn write_csv_file(path: &Path, records: &[RunRecord], reproducible: bool) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(std::io::BufWriter::new(f), records, reproducible).map_err(|e| Error::io(path, e))
}

/// Parses `N`, a comma list `A,B,C`, or `A..B:STEP`, which means `A`
/// followed by every multiple of `STEP` above `A` up to `B`
/// (`1..24:4` is 1, 4, 8, ..., 24).
pub fn parse_flow_list(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("bad flow list `{spec}`; expected N, A,B,C or A..B:STEP"));
    let int = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    if let Some((range, step)) = spec.split_once(':') {
        let (a, b) = range.split_once("..").ok_or_else(bad)?;
        let (a, b, step) = (int(a)?, int(b)?, int(step)?);
        if step == 0 || a > b {
            return Err(bad());
        }
        let mut out = vec![a];
        let mut k = (a / step + 1) * step;
        while k <= b {
            out.push(k);
            k += step;
        }
        return Ok(out);
    }
    spec.split(',').map(int).collect()
}
