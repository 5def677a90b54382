use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crmac::config::parse_config;
use crmac::engine::{Protocol, Scenario};
use crmac::sweep::{parse_flow_list, run_sweep, write_csv, write_csv_file, SweepConfig};

/// Simulate the multichannel cognitive-radio MAC and the 802.11 baseline
/// over a grid of flow counts, topologies and seeds.
#[derive(Debug, Parser)]
#[command(name = "crmac", version)]
struct Cli {
    /// Scenario file (TOML); defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Run only one protocol instead of both.
    #[arg(long, value_parser = ["crmac", "baseline"])]
    protocol: Option<String>,

    /// Flow counts: N, A,B,C, or A..B:STEP (A, then multiples of STEP up to B).
    #[arg(long, value_name = "SPEC")]
    flows: Option<String>,

    /// Number of seeds, starting at the scenario seed.
    #[arg(long, default_value_t = 1, value_name = "N")]
    seeds: u64,

    /// Number of topologies, starting at the scenario topology id.
    #[arg(long, default_value_t = 1, value_name = "N")]
    topologies: u32,

    /// CSV output path; standard output when omitted.
    #[arg(long, value_name = "CSV")]
    out: Option<PathBuf>,

    /// Write one trace file per run into this directory.
    #[arg(long, value_name = "DIR")]
    trace: Option<PathBuf>,

    /// Treat every channel as idle at frame start.
    #[arg(long)]
    disable_sensing: bool,

    /// Do not apply grants overheard on the control channel.
    #[arg(long)]
    no_overhear: bool,

    /// Count packets generated during warmup too.
    #[arg(long)]
    no_warmup_cut: bool,

    /// Omit the timestamp comment so identical runs give identical files.
    #[arg(long)]
    reproducible: bool,
}

fn run(cli: Cli) -> crmac::Result<()> {
    let mut base = match &cli.config {
        Some(path) => parse_config(path)?,
        None => Scenario::default(),
    };
    if cli.disable_sensing {
        base.mac.sensing = false;
    }
    if cli.no_overhear {
        base.mac.overhear = false;
    }
    if cli.no_warmup_cut {
        base.warmup_cut = false;
    }
    let mut sweep = SweepConfig::new(base);
    if let Some(p) = &cli.protocol {
        sweep.protocols = vec![p.parse::<Protocol>()?];
    }
    if let Some(spec) = &cli.flows {
        sweep.flows = parse_flow_list(spec)?;
    }
    sweep.seeds = cli.seeds;
    sweep.topologies = cli.topologies;
    sweep.trace_dir = cli.trace.clone();

    let out = run_sweep(&sweep)?;
    for (key, run) in &out.runs {
        let a = &run.audit;
        if key.protocol == Protocol::Crmac && !a.is_clean() {
            eprintln!(
                "audit: {} flows, topology {}, seed {}: {} conflicting pairs, {} double bookings, {} PU violations",
                key.num_flows, key.topology_id, key.seed, a.conflicting_pairs, a.double_booked, a.pu_violations
            );
        }
    }
    match &cli.out {
        Some(path) => write_csv_file(path, &out.records, cli.reproducible)?,
        None => write_csv(std::io::stdout().lock(), &out.records, cli.reproducible).map_err(|e| crmac::Error::io("<stdout>", e))?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("crmac: {e}");
            ExitCode::FAILURE
        }
    }
}
