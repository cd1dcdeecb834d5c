#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tsncbs::{load_configuration, NetworkConfiguration};

pub const LINK_BPS: f64 = 100e6;

/// Random line or ring of 1..=4 switches, two end systems per switch.
/// Ring flows travel clockwise, which closes a cyclic port dependency.
pub fn random_network(seed: u64) -> NetworkConfiguration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = rng.gen_range(1..=4);
    let ring = n >= 3 && rng.gen_bool(0.5);
    let mut devices = Vec::new();
    let mut ports = Vec::new();
    let mut links = Vec::new();
    for i in 0..n {
        devices.push(json!({"id": format!("S{i}"), "kind": "switch"}));
        for j in 0..2 {
            let es = format!("E{i}_{j}");
            devices.push(json!({"id": es, "kind": "end_system"}));
            ports.push(json!({"id": format!("{es}>S{i}"), "device": es}));
            links.push(json!({"fromPort": format!("{es}>S{i}"), "toDevice": format!("S{i}"), "capacity_bps": LINK_BPS}));
            ports.push(json!({"id": format!("S{i}>{es}"), "device": format!("S{i}")}));
            links.push(json!({"fromPort": format!("S{i}>{es}"), "toDevice": es, "capacity_bps": LINK_BPS}));
        }
    }
    let trunk = |a: usize, b: usize, ports: &mut Vec<Value>, links: &mut Vec<Value>| {
        ports.push(json!({"id": format!("S{a}>S{b}"), "device": format!("S{a}")}));
        links.push(json!({"fromPort": format!("S{a}>S{b}"), "toDevice": format!("S{b}"), "capacity_bps": LINK_BPS}));
    };
    for i in 0..n {
        if i + 1 < n {
            trunk(i, i + 1, &mut ports, &mut links);
            if !ring {
                trunk(i + 1, i, &mut ports, &mut links);
            }
        } else if ring {
            trunk(i, 0, &mut ports, &mut links);
        }
    }

    let count = rng.gen_range(2..=8);
    let mut flows = Vec::new();
    for k in 0..count {
        let (si, sj) = (rng.gen_range(0..n), rng.gen_range(0..2));
        let (mut di, mut dj) = (rng.gen_range(0..n), rng.gen_range(0..2));
        if (si, sj) == (di, dj) {
            if n > 1 {
                di = (di + 1) % n;
            } else {
                dj = 1 - dj;
            }
        }
        let mut path = vec![format!("E{si}_{sj}>S{si}")];
        let mut at = si;
        while at != di {
            let next = if ring || di > at { (at + 1) % n } else { at - 1 };
            path.push(format!("S{at}>S{next}"));
            at = next;
        }
        path.push(format!("S{di}>E{di}_{dj}"));
        let priority: u8 = rng.gen_range(0..=2);
        let rate = rng.gen_range(5..=80) as f64 * 1e5;
        let burst = rng.gen_range(1..=12) * 1000;
        let mut f = json!({
            "id": format!("f{k}"),
            "priority": priority,
            "rate_bps": rate,
            "burst_bits": burst,
            "path": path,
        });
        if priority < 2 {
            f["deadline_us"] = json!(rng.gen_range(1..=20) * 100);
        }
        flows.push(f);
    }
    let doc = json!({
        "name": format!("random-{seed}"),
        "devices": devices,
        "ports": ports,
        "links": links,
        "flows": flows,
    });
    load_configuration(&doc.to_string()).expect("generated document is valid")
}

/// One switch, 2..=4 senders feeding a single output port. Priority 0
/// (and sometimes 1) is shaped with an IdleSlope above its rate.
pub fn single_port_cbs(seed: u64) -> NetworkConfiguration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let senders = rng.gen_range(2..=4);
    let mut devices = vec![json!({"id": "SW", "kind": "switch"}), json!({"id": "D", "kind": "end_system"})];
    let mut ports = vec![json!({"id": "SW>D", "device": "SW"})];
    let mut links = vec![json!({"fromPort": "SW>D", "toDevice": "D", "capacity_bps": LINK_BPS})];
    let mut flows = Vec::new();
    let mut rates = [0f64; 3];
    for s in 0..senders {
        let es = format!("E{s}");
        devices.push(json!({"id": es, "kind": "end_system"}));
        ports.push(json!({"id": format!("{es}>SW"), "device": es}));
        links.push(json!({"fromPort": format!("{es}>SW"), "toDevice": "SW", "capacity_bps": LINK_BPS}));
        for k in 0..rng.gen_range(1..=2) {
            let priority: u8 = if s == 0 && k == 0 { 0 } else { rng.gen_range(0..=2) };
            let rate = rng.gen_range(5..=40) as f64 * 1e5;
            rates[priority as usize] += rate;
            let burst = rng.gen_range(1..=24) * 1000;
            let frame = rng.gen_range(1..=12) * 1000;
            flows.push(json!({
                "id": format!("{es}.{k}"),
                "priority": priority,
                "rate_bps": rate,
                "burst_bits": burst,
                "max_frame_bits": frame.min(burst),
                "path": [format!("{es}>SW"), "SW>D"],
            }));
        }
    }
    let mut cbs = Vec::new();
    let shaped = if rates[1] > 0.0 && rng.gen_bool(0.5) { 2 } else { 1 };
    for &rate in rates.iter().take(shaped) {
        if rate == 0.0 {
            break;
        }
        let p = cbs.len();
        let idle = (rate * rng.gen_range(1.05..3.0)).min(36e6).ceil();
        cbs.push(json!({"port": "SW>D", "priority": p, "idleslope_bps": idle}));
    }
    let doc = json!({
        "name": format!("single-port-{seed}"),
        "devices": devices,
        "ports": ports,
        "links": links,
        "flows": flows,
        "cbs": cbs,
    });
    load_configuration(&doc.to_string()).expect("generated document is valid")
}

pub fn example(name: &str) -> NetworkConfiguration {
    let path = format!("{}/../cli/examples/{name}.json", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).expect("example present");
    load_configuration(&text).expect("example loads")
}
