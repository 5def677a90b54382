//! Browser bindings: each export runs the simulator and returns JSON for
//! the static page in `www/`.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use crmac::engine::{build_network, run_scenario_with, RunOptions, TrafficMode};
use crmac::{Protocol, Scenario};

fn scenario(topology_id: u32, flows: usize) -> Scenario {
    let mut s = Scenario {
        topology_id,
        flows,
        warmup: 1.0,
        ..Scenario::default()
    };
    s.traffic.mode = TrafficMode::Demand;
    s
}

fn to_js(r: crmac::Result<Value>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

fn topology_json(topology_id: u32, flows: usize) -> crmac::Result<Value> {
    let s = scenario(topology_id, flows);
    s.validate()?;
    let net = build_network(&s)?;
    let g = &net.graph;
    let nodes = g
        .node_ids()
        .iter()
        .map(|&v| g.position(v).map(|p| json!({ "id": v.0, "x": p.x, "y": p.y })))
        .collect::<crmac::Result<Vec<_>>>()?;
    let links: Vec<Value> = g.undirected_links().iter().map(|l| json!([l.tx.0, l.rx.0])).collect();
    let routes: Vec<Value> = net
        .flows
        .iter()
        .map(|f| json!({ "id": f.id, "route": f.route.iter().map(|v| v.0).collect::<Vec<_>>(), "rate": f.session_rate }))
        .collect();
    Ok(json!({
        "width": s.area_width,
        "height": s.area_height,
        "nodes": nodes,
        "links": links,
        "flows": routes,
    }))
}

/// Node positions, links and flow routes of a topology.
#[wasm_bindgen]
pub fn topology(topology_id: u32, flows: usize) -> Result<String, JsError> {
    to_js(topology_json(topology_id, flows))
}

fn frame_json(topology_id: u32, flows: usize, frame: u32) -> crmac::Result<Value> {
    let mut s = scenario(topology_id, flows);
    s.warmup = 0.0;
    s.duration = f64::from(frame + 1) * s.frame.frame_secs();
    let out = run_scenario_with(
        &s,
        RunOptions {
            record_frames: true,
            ..RunOptions::default()
        },
    )?;
    let log = out.frames.last();
    let entries: Vec<Value> = log
        .map(|f| {
            f.schedule
                .entries
                .iter()
                .map(|e| {
                    json!({
                        "slot": e.segment.slot,
                        "channel": e.segment.channel.0,
                        "tx": e.link.tx.0,
                        "rx": e.link.rx.0,
                        "packets": e.packets,
                    })
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(json!({
        "frame": log.map_or(0, |f| f.frame),
        "slots": s.frame.num_slots,
        "channels": s.channels.data_rates.len() + 1,
        "entries": entries,
        "atim_collisions": log.map_or(0, |f| f.atim_collisions),
    }))
}

/// The agreed (channel, slot) grid of frame `frame`.
#[wasm_bindgen]
pub fn frame_grid(topology_id: u32, flows: usize, frame: u32) -> Result<String, JsError> {
    to_js(frame_json(topology_id, flows, frame))
}

fn compare_json(topology_id: u32, flows: usize, duration: f64) -> crmac::Result<Value> {
    let mut rows = Vec::new();
    let mut base = None;
    for protocol in [Protocol::Baseline, Protocol::Crmac] {
        let s = Scenario {
            protocol,
            duration,
            ..scenario(topology_id, flows)
        };
        let m = run_scenario_with(&s, RunOptions::default())?.metrics;
        let b = *base.get_or_insert(m.throughput_bps);
        rows.push(json!({
            "protocol": protocol.to_string(),
            "throughput_bps": m.throughput_bps,
            "normalized": (b > 0.0).then(|| m.throughput_bps / b),
            "mean_delay_s": m.mean_delay_s,
            "pdr": m.pdr,
            "generated": m.generated,
            "delivered": m.delivered,
        }));
    }
    Ok(Value::Array(rows))
}

/// Metrics of both protocols on the same topology and flows.
#[wasm_bindgen]
pub fn compare(topology_id: u32, flows: usize, duration: f64) -> Result<String, JsError> {
    to_js(compare_json(topology_id, flows, duration))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_lists_every_node_and_route() {
        let v = topology_json(0, 4).unwrap();
        assert_eq!(v["nodes"].as_array().unwrap().len(), 50);
        assert_eq!(v["flows"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn frame_grid_stays_inside_the_frame() {
        let v = frame_json(0, 8, 20).unwrap();
        assert_eq!(v["frame"], 20);
        for e in v["entries"].as_array().unwrap() {
            assert!(e["slot"].as_u64().unwrap() < 20);
            assert!(e["channel"].as_u64().unwrap() < 12);
        }
    }

    #[test]
    fn baseline_normalizes_to_one() {
        let v = compare_json(0, 4, 5.0).unwrap();
        assert_eq!(v[0]["protocol"], "baseline");
        assert_eq!(v[0]["normalized"], 1.0);
    }
}
