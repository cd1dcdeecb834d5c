//! Network model: devices, output ports, flows and CBS assignments.
//!
//! Units are fixed network-wide: bits, bits per second and seconds.
//! Documents may use the alternative units found in flow tables
//! (`rate_kBps`, `burst_bytes`, `deadline_ms`, ...); they are normalized at
//! ingest (1 kB/s = 8000 bit/s, 1 byte = 8 bits).
//!
//! A [`NetworkConfiguration`] is immutable once built. Deploying a CBS
//! produces a new configuration through [`NetworkConfiguration::with_cbs`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::rational::{parse_decimal, q, ratio, to_f64, Q};

/// Default maximum frame size: a 1542-byte Ethernet frame.
pub const DEFAULT_MAX_FRAME_BITS: i64 = 12_336;

/// Number of priority levels of an 802.1Q output port (0 is highest).
pub const PRIORITY_LEVELS: u8 = 8;

/// Fraction of an output port's capacity that CBS reservations may use.
pub fn max_reservable_fraction() -> Q {
    ratio(3, 4)
}

macro_rules! id_type {
    ($name:ident) => {
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }
    };
}

id_type!(DeviceId);
id_type!(PortId);
id_type!(FlowId);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    #[serde(alias = "Switch", alias = "SW")]
    Switch,
    #[serde(alias = "EndSystem", alias = "ES", alias = "end-system")]
    EndSystem,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Device {
    pub id: DeviceId,
    pub kind: DeviceKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputPort {
    pub id: PortId,
    pub device: DeviceId,
    /// Link capacity C in bits per second.
    pub capacity: Q,
    /// Propagation delay of the outgoing link, seconds.
    pub prop_delay: Q,
    /// Explicit port-to-port edges of the network graph.
    pub next_ports: BTreeSet<PortId>,
    /// Device at the far end of the link, if declared.
    pub to_device: Option<DeviceId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Flow {
    pub id: FlowId,
    /// Long-term rate r, bits per second.
    pub rate: Q,
    /// Burst b, bits.
    pub burst: Q,
    /// Maximum frame size L, bits.
    pub max_frame: Q,
    /// End-to-end deadline in seconds; `None` for best-effort traffic.
    pub deadline: Option<Q>,
    pub priority: u8,
    /// Output ports from the source end-system port to the last switch port.
    pub path: Vec<PortId>,
}

impl Flow {
    pub fn source_port(&self) -> &PortId {
        &self.path[0]
    }

    pub fn crosses(&self, port: &PortId) -> bool {
        self.path.contains(port)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CbsAssignment {
    pub port: PortId,
    pub priority: u8,
    /// Reserved bandwidth (IdleSlope), bits per second.
    pub idle_slope: Q,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{location}: {message}")]
    Schema { location: String, message: String },
    #[error("{location}: duplicate id `{id}`")]
    Duplicate { location: String, id: String },
    #[error("{location}: unknown {what} `{id}`")]
    Unknown { location: String, what: &'static str, id: String },
    #[error("{location}: path is disconnected between `{from}` and `{to}`")]
    Disconnected { location: String, from: String, to: String },
}

impl ConfigError {
    fn schema(location: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Schema { location: location.into(), message: message.into() }
    }
}

/// A constraint violation reported by [`NetworkConfiguration::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Sum of IdleSlopes at a port exceeds 75% of its capacity.
    Bandwidth { port: PortId, total: Q, limit: Q },
    /// IdleSlope below the aggregate rate of the shaped priority.
    BelowRate { port: PortId, priority: u8, idle_slope: Q, rate: Q },
    /// CBS at `priority` without CBS at every higher priority.
    NonContiguous { port: PortId, priority: u8 },
    /// Priority outside 0..=7 or IdleSlope outside (0, C].
    OutOfRange { port: PortId, priority: u8, reason: String },
    UnknownPort { port: PortId },
    EndSystemCbs { port: PortId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Bandwidth { port, total, limit } => write!(
                f,
                "{port}: total IdleSlope {:.0} bps exceeds {:.0} bps (75% of capacity)",
                to_f64(total),
                to_f64(limit)
            ),
            Violation::BelowRate { port, priority, idle_slope, rate } => write!(
                f,
                "{port}/p{priority}: IdleSlope {:.0} bps below shaped rate {:.0} bps",
                to_f64(idle_slope),
                to_f64(rate)
            ),
            Violation::NonContiguous { port, priority } => {
                write!(f, "{port}/p{priority}: CBS without CBS on every higher priority")
            }
            Violation::OutOfRange { port, priority, reason } => write!(f, "{port}/p{priority}: {reason}"),
            Violation::UnknownPort { port } => write!(f, "CBS on unknown port {port}"),
            Violation::EndSystemCbs { port } => {
                write!(f, "{port}: CBS on an end-system port while end-system CBS is disabled")
            }
        }
    }
}

/// Directed graph over output ports induced by flow paths.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PortGraph {
    pub nodes: BTreeSet<PortId>,
    pub edges: BTreeSet<(PortId, PortId)>,
}

impl PortGraph {
    pub fn successors<'a>(&'a self, port: &'a PortId) -> impl Iterator<Item = &'a PortId> + 'a {
        self.edges.iter().filter(move |(a, _)| a == port).map(|(_, b)| b)
    }

    pub fn predecessors<'a>(&'a self, port: &'a PortId) -> impl Iterator<Item = &'a PortId> + 'a {
        self.edges.iter().filter(move |(_, b)| b == port).map(|(a, _)| a)
    }

    pub fn has_cycle(&self) -> bool {
        !crate::nc::cut_edges(self).is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfiguration {
    name: String,
    devices: BTreeMap<DeviceId, Device>,
    ports: BTreeMap<PortId, OutputPort>,
    flows: Vec<Flow>,
    cbs: BTreeMap<(PortId, u8), Q>,
    allow_end_system_cbs: bool,
    // derived, rebuilt on construction
    flows_by_port: BTreeMap<PortId, Vec<usize>>,
    flow_index: BTreeMap<FlowId, usize>,
}

impl NetworkConfiguration {
    /// Assemble a configuration from already-normalized parts.
    pub fn new(
        name: impl Into<String>,
        devices: Vec<Device>,
        ports: Vec<OutputPort>,
        flows: Vec<Flow>,
        cbs: Vec<CbsAssignment>,
        allow_end_system_cbs: bool,
    ) -> Result<Self, ConfigError> {
        let mut device_map = BTreeMap::new();
        for (i, d) in devices.into_iter().enumerate() {
            if device_map.contains_key(&d.id) {
                return Err(ConfigError::Duplicate { location: format!("devices[{i}]"), id: d.id.0 });
            }
            device_map.insert(d.id.clone(), d);
        }
        let mut port_map = BTreeMap::new();
        for (i, p) in ports.into_iter().enumerate() {
            let location = format!("ports[{i}]");
            if port_map.contains_key(&p.id) {
                return Err(ConfigError::Duplicate { location, id: p.id.0 });
            }
            if !device_map.contains_key(&p.device) {
                return Err(ConfigError::Unknown { location, what: "device", id: p.device.0 });
            }
            if !p.capacity.is_positive() {
                return Err(ConfigError::schema(location, "capacity must be positive"));
            }
            if p.prop_delay.is_negative() {
                return Err(ConfigError::schema(location, "propagation delay must be non-negative"));
            }
            port_map.insert(p.id.clone(), p);
        }
        let mut config = NetworkConfiguration {
            name: name.into(),
            devices: device_map,
            ports: port_map,
            flows: Vec::new(),
            cbs: BTreeMap::new(),
            allow_end_system_cbs,
            flows_by_port: BTreeMap::new(),
            flow_index: BTreeMap::new(),
        };
        let mut flows = flows;
        flows.sort_by(|a, b| a.id.cmp(&b.id));
        for (i, flow) in flows.iter().enumerate() {
            config.check_flow(flow, &format!("flows[{i}]"))?;
        }
        for w in flows.windows(2) {
            if w[0].id == w[1].id {
                return Err(ConfigError::Duplicate { location: "flows".into(), id: w[0].id.0.clone() });
            }
        }
        config.flows = flows;
        config.rebuild_indexes();
        for (i, a) in cbs.into_iter().enumerate() {
            let key = (a.port.clone(), a.priority);
            if config.cbs.contains_key(&key) {
                return Err(ConfigError::Duplicate {
                    location: format!("cbs[{i}]"),
                    id: format!("{}/p{}", a.port, a.priority),
                });
            }
            config.cbs.insert(key, a.idle_slope);
        }
        Ok(config)
    }

    fn check_flow(&self, flow: &Flow, location: &str) -> Result<(), ConfigError> {
        if !flow.rate.is_positive() {
            return Err(ConfigError::schema(format!("{location}.rate"), "rate must be positive"));
        }
        if !flow.max_frame.is_positive() {
            return Err(ConfigError::schema(format!("{location}.max_frame"), "frame size must be positive"));
        }
        if flow.burst < flow.max_frame {
            return Err(ConfigError::schema(
                format!("{location}.burst"),
                "burst must be at least the maximum frame size",
            ));
        }
        if flow.priority >= PRIORITY_LEVELS {
            return Err(ConfigError::schema(format!("{location}.priority"), "priority must be in 0..=7"));
        }
        if let Some(d) = &flow.deadline {
            if !d.is_positive() {
                return Err(ConfigError::schema(format!("{location}.deadline"), "deadline must be positive"));
            }
        }
        if flow.path.is_empty() {
            return Err(ConfigError::schema(format!("{location}.path"), "path must not be empty"));
        }
        for (k, port) in flow.path.iter().enumerate() {
            if !self.ports.contains_key(port) {
                return Err(ConfigError::Unknown {
                    location: format!("{location}.path[{k}]"),
                    what: "port",
                    id: port.0.clone(),
                });
            }
        }
        let first = &self.ports[&flow.path[0]];
        if self.devices[&first.device].kind != DeviceKind::EndSystem {
            return Err(ConfigError::schema(
                format!("{location}.path[0]"),
                format!("path must start at an end-system port, `{}` belongs to a switch", first.id),
            ));
        }
        let mut seen = BTreeSet::new();
        for (k, port) in flow.path.iter().enumerate() {
            if !seen.insert(port) {
                return Err(ConfigError::schema(format!("{location}.path[{k}]"), "path revisits a port"));
            }
        }
        for (k, w) in flow.path.windows(2).enumerate() {
            if !self.linked(&w[0], &w[1]) {
                return Err(ConfigError::Disconnected {
                    location: format!("{location}.path[{}]", k + 1),
                    from: w[0].0.clone(),
                    to: w[1].0.clone(),
                });
            }
        }
        Ok(())
    }

    fn linked(&self, from: &PortId, to: &PortId) -> bool {
        let a = &self.ports[from];
        let b = &self.ports[to];
        a.device != b.device && (a.next_ports.contains(to) || a.to_device.as_ref() == Some(&b.device))
    }

    fn rebuild_indexes(&mut self) {
        self.flows_by_port.clear();
        self.flow_index.clear();
        for (i, f) in self.flows.iter().enumerate() {
            self.flow_index.insert(f.id.clone(), i);
            for p in &f.path {
                self.flows_by_port.entry(p.clone()).or_default().push(i);
            }
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn devices(&self) -> impl Iterator<Item = &Device> {
        self.devices.values()
    }

    pub fn device(&self, id: &DeviceId) -> Option<&Device> {
        self.devices.get(id)
    }

    pub fn ports(&self) -> impl Iterator<Item = &OutputPort> {
        self.ports.values()
    }

    pub fn port(&self, id: &PortId) -> Option<&OutputPort> {
        self.ports.get(id)
    }

    pub fn capacity(&self, id: &PortId) -> &Q {
        &self.ports[id].capacity
    }

    pub fn device_of(&self, port: &PortId) -> &DeviceId {
        &self.ports[port].device
    }

    pub fn is_end_system_port(&self, port: &PortId) -> bool {
        self.devices[self.device_of(port)].kind == DeviceKind::EndSystem
    }

    pub fn allow_end_system_cbs(&self) -> bool {
        self.allow_end_system_cbs
    }

    /// Whether a CBS may be deployed on this port's device.
    pub fn cbs_capable(&self, port: &PortId) -> bool {
        self.allow_end_system_cbs || !self.is_end_system_port(port)
    }

    pub fn ports_of_device(&self, dev: &DeviceId) -> Vec<&PortId> {
        self.ports.values().filter(|p| &p.device == dev).map(|p| &p.id).collect()
    }

    /// Flows sorted by id.
    pub fn flows(&self) -> &[Flow] {
        &self.flows
    }

    pub fn flow(&self, id: &FlowId) -> Option<&Flow> {
        self.flow_index.get(id).map(|&i| &self.flows[i])
    }

    pub fn flow_position(&self, id: &FlowId) -> Option<usize> {
        self.flow_index.get(id).copied()
    }

    /// Flows crossing `port`, in id order.
    pub fn flows_through(&self, port: &PortId) -> Vec<&Flow> {
        self.flow_indices_through(port).iter().map(|&i| &self.flows[i]).collect()
    }

    pub(crate) fn flow_indices_through(&self, port: &PortId) -> &[usize] {
        self.flows_by_port.get(port).map(Vec::as_slice).unwrap_or(&[])
    }

    /// F(op, p).
    pub fn flows_at(&self, port: &PortId, priority: u8) -> Vec<&Flow> {
        self.flows_through(port).into_iter().filter(|f| f.priority == priority).collect()
    }

    /// F(dev): flows with at least one path port on `dev`.
    pub fn flows_of_device(&self, dev: &DeviceId) -> Vec<&Flow> {
        self.flows.iter().filter(|f| f.path.iter().any(|p| self.device_of(p) == dev)).collect()
    }

    /// F(p).
    pub fn flows_of_priority(&self, priority: u8) -> Vec<&Flow> {
        self.flows.iter().filter(|f| f.priority == priority).collect()
    }

    pub fn priorities_at(&self, port: &PortId) -> BTreeSet<u8> {
        self.flows_through(port).iter().map(|f| f.priority).collect()
    }

    /// r_op^p: aggregate rate of priority `p` at `op`.
    pub fn aggregate_rate(&self, port: &PortId, priority: u8) -> Q {
        self.flows_at(port, priority).iter().fold(Q::zero(), |acc, f| acc + &f.rate)
    }

    /// Maximum frame among flows of priority `p` at `op` (0 if none).
    pub fn max_frame_of(&self, port: &PortId, priority: u8) -> Q {
        self.flows_at(port, priority).iter().map(|f| f.max_frame.clone()).max().unwrap_or_else(Q::zero)
    }

    /// L^{>p,max} at `op`: maximum frame among lower priorities (0 if none).
    pub fn max_frame_below(&self, port: &PortId, priority: u8) -> Q {
        self.flows_through(port)
            .iter()
            .filter(|f| f.priority > priority)
            .map(|f| f.max_frame.clone())
            .max()
            .unwrap_or_else(Q::zero)
    }

    pub fn cbs(&self) -> &BTreeMap<(PortId, u8), Q> {
        &self.cbs
    }

    pub fn cbs_assignments(&self) -> Vec<CbsAssignment> {
        self.cbs
            .iter()
            .map(|((port, priority), i)| CbsAssignment { port: port.clone(), priority: *priority, idle_slope: i.clone() })
            .collect()
    }

    pub fn idle_slope(&self, port: &PortId, priority: u8) -> Option<&Q> {
        self.cbs.get(&(port.clone(), priority))
    }

    pub fn has_cbs(&self, port: &PortId, priority: u8) -> bool {
        self.cbs.contains_key(&(port.clone(), priority))
    }

    /// Sum of IdleSlopes configured at `port`.
    pub fn reserved_bandwidth(&self, port: &PortId) -> Q {
        self.cbs.iter().filter(|((p, _), _)| p == port).fold(Q::zero(), |acc, (_, i)| acc + i)
    }

    /// A flow is shaped iff its priority has a CBS on some port of its path.
    pub fn is_shaped(&self, flow: &Flow) -> bool {
        flow.path.iter().any(|p| self.has_cbs(p, flow.priority))
    }

    pub fn is_tsn(&self, dev: &DeviceId) -> bool {
        self.cbs.keys().any(|(p, _)| self.device_of(p) == dev)
    }

    pub fn tsn_devices(&self) -> BTreeSet<DeviceId> {
        self.cbs.keys().map(|(p, _)| self.device_of(p).clone()).collect()
    }

    pub fn cbs_count(&self) -> usize {
        self.cbs.len()
    }

    /// New configuration with `assignment` added or its IdleSlope replaced.
    pub fn with_cbs(&self, assignment: CbsAssignment) -> Self {
        let mut next = self.clone();
        next.cbs.insert((assignment.port, assignment.priority), assignment.idle_slope);
        next
    }

    pub fn with_cbs_set(&self, cbs: BTreeMap<(PortId, u8), Q>) -> Self {
        let mut next = self.clone();
        next.cbs = cbs;
        next
    }

    pub fn without_cbs(&self) -> Self {
        self.with_cbs_set(BTreeMap::new())
    }

    /// Check constraints 9a, 9b, 9c and the domain of 9e on every port.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut by_port: BTreeMap<&PortId, Vec<(u8, &Q)>> = BTreeMap::new();
        for ((port, priority), idle) in &self.cbs {
            by_port.entry(port).or_default().push((*priority, idle));
        }
        for (port, entries) in by_port {
            let Some(op) = self.ports.get(port) else {
                out.push(Violation::UnknownPort { port: port.clone() });
                continue;
            };
            if !self.cbs_capable(port) {
                out.push(Violation::EndSystemCbs { port: port.clone() });
            }
            let mut total = Q::zero();
            for &(priority, idle) in &entries {
                total += idle;
                if priority >= PRIORITY_LEVELS {
                    out.push(Violation::OutOfRange {
                        port: port.clone(),
                        priority,
                        reason: "priority outside 0..=7".into(),
                    });
                }
                if !idle.is_positive() || idle > &op.capacity {
                    out.push(Violation::OutOfRange {
                        port: port.clone(),
                        priority,
                        reason: "IdleSlope must lie in (0, C]".into(),
                    });
                }
                let rate = self.aggregate_rate(port, priority);
                if idle < &rate {
                    out.push(Violation::BelowRate {
                        port: port.clone(),
                        priority,
                        idle_slope: idle.clone(),
                        rate,
                    });
                }
                if (0..priority).any(|k| !self.has_cbs(port, k)) {
                    out.push(Violation::NonContiguous { port: port.clone(), priority });
                }
            }
            let limit = &op.capacity * max_reservable_fraction();
            if total > limit {
                out.push(Violation::Bandwidth { port: port.clone(), total, limit });
            }
        }
        out
    }

    /// Union of consecutive-pair edges over all flow paths.
    pub fn port_graph(&self) -> PortGraph {
        let mut graph = PortGraph::default();
        for f in &self.flows {
            graph.nodes.extend(f.path.iter().cloned());
            for w in f.path.windows(2) {
                graph.edges.insert((w[0].clone(), w[1].clone()));
            }
        }
        graph
    }

    /// Serialize to the configuration document format (unicast flows).
    pub fn to_document(&self) -> Value {
        let devices: Vec<Value> = self
            .devices
            .values()
            .map(|d| serde_json::json!({ "id": d.id, "kind": d.kind }))
            .collect();
        let ports: Vec<Value> =
            self.ports.values().map(|p| serde_json::json!({ "id": p.id, "device": p.device })).collect();
        let mut links = Vec::new();
        for p in self.ports.values() {
            let mut base = serde_json::Map::new();
            base.insert("fromPort".into(), Value::String(p.id.0.clone()));
            base.insert("capacity_bps".into(), number(&p.capacity));
            if !p.prop_delay.is_zero() {
                base.insert("prop_delay_us".into(), number(&(&p.prop_delay * q(1_000_000))));
            }
            if let Some(dev) = &p.to_device {
                let mut link = base.clone();
                link.insert("toDevice".into(), Value::String(dev.0.clone()));
                links.push(Value::Object(link));
            }
            for next in &p.next_ports {
                let mut link = base.clone();
                link.insert("toPort".into(), Value::String(next.0.clone()));
                links.push(Value::Object(link));
            }
            if p.to_device.is_none() && p.next_ports.is_empty() {
                links.push(Value::Object(base));
            }
        }
        let flows: Vec<Value> = self
            .flows
            .iter()
            .map(|f| {
                let mut m = serde_json::Map::new();
                m.insert("id".into(), Value::String(f.id.0.clone()));
                m.insert("priority".into(), Value::from(f.priority));
                m.insert("rate_bps".into(), number(&f.rate));
                m.insert("burst_bits".into(), number(&f.burst));
                m.insert("max_frame_bits".into(), number(&f.max_frame));
                if let Some(d) = &f.deadline {
                    m.insert("deadline_us".into(), number(&(d * q(1_000_000))));
                }
                m.insert("path".into(), serde_json::to_value(&f.path).expect("ids serialize"));
                Value::Object(m)
            })
            .collect();
        let cbs: Vec<Value> = self
            .cbs
            .iter()
            .map(|((port, p), i)| serde_json::json!({ "port": port, "priority": p, "idleslope_bps": number(i) }))
            .collect();
        let mut doc = serde_json::Map::new();
        if !self.name.is_empty() {
            doc.insert("name".into(), Value::String(self.name.clone()));
        }
        if self.allow_end_system_cbs {
            doc.insert("options".into(), serde_json::json!({ "allow_end_system_cbs": true }));
        }
        doc.insert("devices".into(), Value::Array(devices));
        doc.insert("ports".into(), Value::Array(ports));
        doc.insert("links".into(), Value::Array(links));
        doc.insert("flows".into(), Value::Array(flows));
        doc.insert("cbs".into(), Value::Array(cbs));
        Value::Object(doc)
    }
}

/// Exact decimal JSON number when the rational terminates, else 12 digits.
fn number(value: &Q) -> Value {
    let text = crate::rational::exact_decimal(value).unwrap_or_else(|| crate::rational::format_fixed(value, 12));
    let n: serde_json::Number = text.parse().expect("decimal literal parses as JSON number");
    Value::Number(n)
}

// ---------------------------------------------------------------------------
// Document ingestion

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    description: Option<Value>,
    #[serde(default)]
    options: DocOptions,
    devices: Vec<DocDevice>,
    ports: Vec<DocPort>,
    links: Vec<DocLink>,
    #[serde(default)]
    flows: Vec<DocFlow>,
    #[serde(default)]
    routes: Vec<DocRoute>,
    #[serde(default)]
    cbs: Vec<DocCbs>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocOptions {
    #[serde(default)]
    allow_end_system_cbs: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocDevice {
    id: DeviceId,
    kind: DeviceKind,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocPort {
    id: PortId,
    device: DeviceId,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocLink {
    #[serde(rename = "fromPort")]
    from_port: PortId,
    #[serde(rename = "toPort", default)]
    to_port: Option<PortId>,
    #[serde(rename = "toDevice", default)]
    to_device: Option<DeviceId>,
    capacity_bps: serde_json::Number,
    #[serde(default)]
    prop_delay_us: Option<serde_json::Number>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocFlow {
    id: String,
    priority: u8,
    #[serde(default)]
    rate_bps: Option<serde_json::Number>,
    #[serde(default, rename = "rate_kBps")]
    rate_kbps: Option<serde_json::Number>,
    #[serde(default)]
    burst_bits: Option<serde_json::Number>,
    #[serde(default)]
    burst_bytes: Option<serde_json::Number>,
    #[serde(default)]
    max_frame_bits: Option<serde_json::Number>,
    #[serde(default)]
    max_frame_bytes: Option<serde_json::Number>,
    #[serde(default)]
    deadline_us: Option<serde_json::Number>,
    #[serde(default)]
    deadline_ms: Option<serde_json::Number>,
    #[serde(default)]
    path: Option<Vec<PortId>>,
    #[serde(default)]
    sources: Option<Vec<DeviceId>>,
    #[serde(default)]
    destinations: Option<Vec<DeviceId>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocRoute {
    source: DeviceId,
    destination: DeviceId,
    path: Vec<PortId>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocCbs {
    port: PortId,
    priority: u8,
    idleslope_bps: serde_json::Number,
}

fn decimal(n: &serde_json::Number, location: &str) -> Result<Q, ConfigError> {
    parse_decimal(&n.to_string()).ok_or_else(|| ConfigError::schema(location, format!("not a number: {n}")))
}

/// Pick exactly one of two alternative unit fields, scaling the second.
fn one_of(
    primary: &Option<serde_json::Number>,
    alternative: &Option<serde_json::Number>,
    scale: Q,
    location: &str,
    names: (&str, &str),
) -> Result<Option<Q>, ConfigError> {
    match (primary, alternative) {
        (Some(_), Some(_)) => Err(ConfigError::schema(
            location,
            format!("give either `{}` or `{}`, not both", names.0, names.1),
        )),
        (Some(a), None) => Ok(Some(decimal(a, &format!("{location}.{}", names.0))?)),
        (None, Some(b)) => Ok(Some(decimal(b, &format!("{location}.{}", names.1))? * scale)),
        (None, None) => Ok(None),
    }
}

/// Parse and validate a configuration document (JSON).
pub fn load_configuration(text: &str) -> Result<NetworkConfiguration, ConfigError> {
    let doc: Document = serde_json::from_str(text).map_err(|e| ConfigError::Schema {
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let _ = &doc.description;

    let devices: Vec<Device> = doc.devices.iter().map(|d| Device { id: d.id.clone(), kind: d.kind }).collect();
    let mut device_ids: BTreeSet<&DeviceId> = BTreeSet::new();
    for (i, d) in devices.iter().enumerate() {
        if !device_ids.insert(&d.id) {
            return Err(ConfigError::Duplicate { location: format!("devices[{i}]"), id: d.id.0.clone() });
        }
    }

    let mut port_decl: BTreeMap<PortId, (DeviceId, usize)> = BTreeMap::new();
    for (i, p) in doc.ports.iter().enumerate() {
        if port_decl.insert(p.id.clone(), (p.device.clone(), i)).is_some() {
            return Err(ConfigError::Duplicate { location: format!("ports[{i}]"), id: p.id.0.clone() });
        }
    }

    struct LinkAcc {
        capacity: Option<Q>,
        prop: Option<Q>,
        next_ports: BTreeSet<PortId>,
        to_device: Option<DeviceId>,
    }
    let mut acc: BTreeMap<PortId, LinkAcc> = BTreeMap::new();
    for (i, link) in doc.links.iter().enumerate() {
        let location = format!("links[{i}]");
        if !port_decl.contains_key(&link.from_port) {
            return Err(ConfigError::Unknown {
                location: format!("{location}.fromPort"),
                what: "port",
                id: link.from_port.0.clone(),
            });
        }
        let capacity = decimal(&link.capacity_bps, &format!("{location}.capacity_bps"))?;
        if !capacity.is_positive() {
            return Err(ConfigError::schema(format!("{location}.capacity_bps"), "capacity must be positive"));
        }
        let prop = match &link.prop_delay_us {
            Some(n) => decimal(n, &format!("{location}.prop_delay_us"))? / q(1_000_000),
            None => Q::zero(),
        };
        let entry = acc.entry(link.from_port.clone()).or_insert(LinkAcc {
            capacity: None,
            prop: None,
            next_ports: BTreeSet::new(),
            to_device: None,
        });
        if let Some(c) = &entry.capacity {
            if c != &capacity {
                return Err(ConfigError::schema(
                    format!("{location}.capacity_bps"),
                    format!("conflicting capacity for port `{}`", link.from_port),
                ));
            }
        }
        entry.capacity = Some(capacity);
        if let Some(p) = &entry.prop {
            if p != &prop {
                return Err(ConfigError::schema(
                    format!("{location}.prop_delay_us"),
                    format!("conflicting propagation delay for port `{}`", link.from_port),
                ));
            }
        }
        entry.prop = Some(prop);
        if let Some(to) = &link.to_port {
            if !port_decl.contains_key(to) {
                return Err(ConfigError::Unknown {
                    location: format!("{location}.toPort"),
                    what: "port",
                    id: to.0.clone(),
                });
            }
            entry.next_ports.insert(to.clone());
        }
        if let Some(dev) = &link.to_device {
            if !device_ids.contains(dev) {
                return Err(ConfigError::Unknown {
                    location: format!("{location}.toDevice"),
                    what: "device",
                    id: dev.0.clone(),
                });
            }
            if let Some(existing) = &entry.to_device {
                if existing != dev {
                    return Err(ConfigError::schema(
                        format!("{location}.toDevice"),
                        format!("port `{}` is linked to two devices", link.from_port),
                    ));
                }
            }
            entry.to_device = Some(dev.clone());
        }
    }

    let mut ports = Vec::new();
    for (id, (device, i)) in &port_decl {
        let Some(link) = acc.remove(id) else {
            return Err(ConfigError::schema(format!("ports[{i}]"), format!("port `{id}` has no outgoing link")));
        };
        ports.push(OutputPort {
            id: id.clone(),
            device: device.clone(),
            capacity: link.capacity.expect("set with every link"),
            prop_delay: link.prop.unwrap_or_else(Q::zero),
            next_ports: link.next_ports,
            to_device: link.to_device,
        });
    }

    let mut routes: BTreeMap<(DeviceId, DeviceId), &Vec<PortId>> = BTreeMap::new();
    for (i, r) in doc.routes.iter().enumerate() {
        if routes.insert((r.source.clone(), r.destination.clone()), &r.path).is_some() {
            return Err(ConfigError::Duplicate {
                location: format!("routes[{i}]"),
                id: format!("{}->{}", r.source, r.destination),
            });
        }
    }

    let mut flows = Vec::new();
    for (i, f) in doc.flows.iter().enumerate() {
        let location = format!("flows[{i}]");
        let rate = one_of(&f.rate_bps, &f.rate_kbps, q(8000), &location, ("rate_bps", "rate_kBps"))?
            .ok_or_else(|| ConfigError::schema(&location, "missing rate (`rate_bps` or `rate_kBps`)"))?;
        let burst = one_of(&f.burst_bits, &f.burst_bytes, q(8), &location, ("burst_bits", "burst_bytes"))?
            .ok_or_else(|| ConfigError::schema(&location, "missing burst (`burst_bits` or `burst_bytes`)"))?;
        let frame =
            one_of(&f.max_frame_bits, &f.max_frame_bytes, q(8), &location, ("max_frame_bits", "max_frame_bytes"))?;
        let max_frame = frame.unwrap_or_else(|| std::cmp::min(burst.clone(), q(DEFAULT_MAX_FRAME_BITS)));
        let deadline = one_of(&f.deadline_us, &f.deadline_ms, q(1000), &location, ("deadline_us", "deadline_ms"))?
            .map(|us| us / q(1_000_000));

        let make = |id: String, path: Vec<PortId>| Flow {
            id: FlowId(id),
            rate: rate.clone(),
            burst: burst.clone(),
            max_frame: max_frame.clone(),
            deadline: deadline.clone(),
            priority: f.priority,
            path,
        };
        match (&f.path, &f.sources, &f.destinations) {
            (Some(path), None, None) => flows.push(make(f.id.clone(), path.clone())),
            (None, Some(sources), Some(destinations)) => {
                if sources.is_empty() || destinations.is_empty() {
                    return Err(ConfigError::schema(&location, "multicast needs sources and destinations"));
                }
                for src in sources {
                    for dst in destinations {
                        if src == dst {
                            continue;
                        }
                        let path = routes.get(&(src.clone(), dst.clone())).ok_or_else(|| {
                            ConfigError::schema(&location, format!("no route from `{src}` to `{dst}`"))
                        })?;
                        flows.push(make(multicast_flow_id(&f.id, src, dst), (*path).clone()));
                    }
                }
            }
            _ => {
                return Err(ConfigError::schema(
                    &location,
                    "flow needs either `path` or both `sources` and `destinations`",
                ))
            }
        }
    }

    let cbs = doc
        .cbs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            Ok(CbsAssignment {
                port: c.port.clone(),
                priority: c.priority,
                idle_slope: decimal(&c.idleslope_bps, &format!("cbs[{i}].idleslope_bps"))?,
            })
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;
    for (i, c) in cbs.iter().enumerate() {
        if !port_decl.contains_key(&c.port) {
            return Err(ConfigError::Unknown { location: format!("cbs[{i}].port"), what: "port", id: c.port.0.clone() });
        }
    }

    NetworkConfiguration::new(
        doc.name.unwrap_or_default(),
        devices,
        ports,
        flows,
        cbs,
        doc.options.allow_end_system_cbs,
    )
}

/// Identifier of one unicast branch of a multicast flow entry.
pub fn multicast_flow_id(base: &str, src: &DeviceId, dst: &DeviceId) -> String {
    format!("{base}@{src}->{dst}")
}

/// Base name of a (possibly expanded) flow id.
pub fn base_flow_name(id: &FlowId) -> &str {
    id.0.split('@').next().unwrap_or(&id.0)
}
