//! Network Calculus engine.
//!
//! Per (output port, priority) the engine builds an aggregate arrival
//! curve and a service curve, and bounds the local delay by their
//! horizontal deviation. Priorities are served non-preemptively by strict
//! priority (NP-SP); a priority may instead be shaped by a CBS, whose
//! guaranteed service is `I·[t − credMax/I]⁺`.
//!
//! Flows are tracked as leaky buckets. After each port a flow's burst grows
//! by `r·d` and the flows leaving one upstream port towards the same
//! downstream port are capped by the upstream line rate (and by the CBS
//! output constraint when the upstream class is shaped).
//!
//! Cyclic port graphs are cut by a DFS; the bursts crossing the cut edges
//! are iterated to a fixed point.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::Signed;
use serde_json::{json, Value};
use thiserror::Error;

use crate::curves::{Deviation, PwlCurve};
use crate::model::{Flow, FlowId, NetworkConfiguration, PortGraph, PortId};
use crate::rational::{ceil_to_grid, format_fixed, q, ratio, seconds_to_us, zero, Q};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NcError {
    #[error("IdleSlope {idle} exceeds port capacity {capacity}")]
    IdleAboveCapacity { idle: Q, capacity: Q },
    #[error("higher-priority IdleSlopes saturate the link")]
    Saturated,
    #[error("CBS at {port}/p{priority} without CBS on every higher priority")]
    NonContiguous { port: PortId, priority: u8 },
}

/// Lowest credit a CBS queue can reach: `(I − C)·L_p/C`.
pub fn cred_min(idle: &Q, capacity: &Q, frame: &Q) -> Result<Q, NcError> {
    if idle > capacity {
        return Err(NcError::IdleAboveCapacity { idle: idle.clone(), capacity: capacity.clone() });
    }
    Ok((idle - capacity) * frame / capacity)
}

/// `T = (Σ credMin_k − L^{>p,max}) / (Σ I_k − C)` over the higher CBS classes.
pub fn cbs_latency(higher_cred_mins: &[Q], higher_idles: &[Q], lower_frame: &Q, capacity: &Q) -> Result<Q, NcError> {
    let cred_sum = higher_cred_mins.iter().fold(zero(), |acc, c| acc + c);
    let idle_sum = higher_idles.iter().fold(zero(), |acc, c| acc + c);
    let den = idle_sum - capacity;
    if !den.is_negative() {
        return Err(NcError::Saturated);
    }
    Ok((cred_sum - lower_frame) / den)
}

/// Highest credit a CBS queue can reach: `I·T`.
pub fn cred_max(
    idle: &Q,
    higher_cred_mins: &[Q],
    higher_idles: &[Q],
    lower_frame: &Q,
    capacity: &Q,
) -> Result<Q, NcError> {
    Ok(idle * cbs_latency(higher_cred_mins, higher_idles, lower_frame, capacity)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServiceMode {
    NpSp,
    Cbs { idle_slope: Q, cred_max: Q, cred_min: Q, latency: Q },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortPriorityService {
    pub port: PortId,
    pub priority: u8,
    pub curve: PwlCurve,
    pub mode: ServiceMode,
}

/// CBS parameters of `(port, priority)`, or `None` if the class is not shaped.
pub fn cbs_parameters(config: &NetworkConfiguration, port: &PortId, priority: u8) -> Option<Result<ServiceMode, NcError>> {
    let idle = config.idle_slope(port, priority)?;
    Some(cbs_parameters_inner(config, port, priority, idle))
}

fn cbs_parameters_inner(
    config: &NetworkConfiguration,
    port: &PortId,
    priority: u8,
    idle: &Q,
) -> Result<ServiceMode, NcError> {
    let capacity = config.capacity(port);
    let mut mins = Vec::new();
    let mut idles = Vec::new();
    for k in 0..priority {
        let Some(ik) = config.idle_slope(port, k) else {
            return Err(NcError::NonContiguous { port: port.clone(), priority });
        };
        mins.push(cred_min(ik, capacity, &config.max_frame_of(port, k))?);
        idles.push(ik.clone());
    }
    let lower = config.max_frame_below(port, priority);
    let latency = cbs_latency(&mins, &idles, &lower, capacity)?;
    Ok(ServiceMode::Cbs {
        idle_slope: idle.clone(),
        cred_max: idle * &latency,
        cred_min: cred_min(idle, capacity, &config.max_frame_of(port, priority))?,
        latency,
    })
}

/// Rate-latency service of a CBS-shaped class.
pub fn cbs_service_curve(
    config: &NetworkConfiguration,
    port: &PortId,
    priority: u8,
) -> Option<Result<PortPriorityService, NcError>> {
    let mode = cbs_parameters(config, port, priority)?;
    Some(mode.map(|mode| {
        let ServiceMode::Cbs { idle_slope, latency, .. } = &mode else { unreachable!() };
        let curve = PwlCurve::rate_latency(idle_slope.clone(), latency.clone()).expect("IdleSlope is positive");
        PortPriorityService { port: port.clone(), priority, curve, mode }
    }))
}

/// Output constraint of a CBS queue: `λ(I, credMax − credMin)`.
pub fn cbs_output_cap(mode: &ServiceMode) -> Option<PwlCurve> {
    match mode {
        ServiceMode::NpSp => None,
        ServiceMode::Cbs { idle_slope, cred_max, cred_min, .. } => {
            Some(PwlCurve::leaky_bucket(idle_slope.clone(), cred_max - cred_min).expect("non-negative"))
        }
    }
}

/// Left-over service of an NP-SP class: `(C·t − Σ α_higher − L^{>p,max})↑`.
pub fn npsp_leftover(capacity: &Q, higher: &[PwlCurve], max_lower_frame: &Q) -> PwlCurve {
    let line = PwlCurve::leaky_bucket(capacity.clone(), zero()).expect("positive capacity");
    PwlCurve::subtract_and_close(&line, higher, max_lower_frame)
}

/// Line-shaped output arrival curve `min(C·t, α(t + d))`.
pub fn output_arrival(alpha: &PwlCurve, d: &Q, capacity: &Q) -> PwlCurve {
    let line = PwlCurve::leaky_bucket(capacity.clone(), zero()).expect("positive capacity");
    line.min_of(&alpha.shift_left(d))
}

/// Back edges of a DFS visiting roots (ports without predecessors) and
/// successors in lexicographic order. Removing them leaves a DAG.
pub fn cut_edges(graph: &PortGraph) -> Vec<(PortId, PortId)> {
    let mut succ: BTreeMap<&PortId, Vec<&PortId>> = BTreeMap::new();
    let mut has_pred = BTreeSet::new();
    for (a, b) in &graph.edges {
        succ.entry(a).or_default().push(b);
        has_pred.insert(b);
    }
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let mut mark: BTreeMap<&PortId, Mark> = graph.nodes.iter().map(|n| (n, Mark::New)).collect();
    let mut cuts = Vec::new();
    let roots = graph.nodes.iter().filter(|n| !has_pred.contains(n)).chain(graph.nodes.iter());
    for root in roots {
        if mark[root] != Mark::New {
            continue;
        }
        let mut stack: Vec<(&PortId, usize)> = vec![(root, 0)];
        mark.insert(root, Mark::Active);
        while let Some((node, next)) = stack.pop() {
            let children = succ.get(node).map(Vec::as_slice).unwrap_or(&[]);
            if next < children.len() {
                stack.push((node, next + 1));
                let child = children[next];
                match mark[child] {
                    Mark::New => {
                        mark.insert(child, Mark::Active);
                        stack.push((child, 0));
                    }
                    Mark::Active => cuts.push((node.clone(), child.clone())),
                    Mark::Done => {}
                }
            } else {
                mark.insert(node, Mark::Done);
            }
        }
    }
    cuts.sort();
    cuts
}

/// Kahn order of the graph without `cuts`, smallest id first among ready nodes.
pub fn topological_order(graph: &PortGraph, cuts: &BTreeSet<(PortId, PortId)>) -> Vec<PortId> {
    let mut indeg: BTreeMap<&PortId, usize> = graph.nodes.iter().map(|n| (n, 0)).collect();
    let mut succ: BTreeMap<&PortId, Vec<&PortId>> = BTreeMap::new();
    for e in &graph.edges {
        if cuts.contains(e) {
            continue;
        }
        *indeg.get_mut(&e.1).expect("edge endpoints are nodes") += 1;
        succ.entry(&e.0).or_default().push(&e.1);
    }
    let mut ready: BTreeSet<&PortId> = indeg.iter().filter(|(_, &d)| d == 0).map(|(n, _)| *n).collect();
    let mut order = Vec::with_capacity(graph.nodes.len());
    while let Some(node) = ready.pop_first() {
        order.push(node.clone());
        for s in succ.get(node).map(Vec::as_slice).unwrap_or(&[]) {
            let d = indeg.get_mut(s).expect("node");
            *d -= 1;
            if *d == 0 {
                ready.insert(s);
            }
        }
    }
    assert_eq!(order.len(), graph.nodes.len(), "cut set must leave a DAG");
    order
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub max_iterations: usize,
    /// Relative change on every cut burst below which the iteration stops.
    pub tolerance: Q,
    /// A cut burst above this multiple of its source burst counts as divergence.
    pub divergence_factor: Q,
    /// Bursts are rounded up to multiples of `1/burst_grid` bits after each hop.
    pub burst_grid: u64,
    /// Add one maximum frame to every line and CBS output cap, so that a
    /// frame becoming eligible only once fully received is covered.
    /// The default is the fluid cap `min(C·t, ·)`.
    pub packetized_lines: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            max_iterations: 1000,
            tolerance: ratio(1, 1_000_000_000),
            divergence_factor: q(1_000_000),
            burst_grid: 1 << 20,
            packetized_lines: false,
        }
    }
}

/// Burst of every flow on entry to each hop of its path; the last entry is
/// the burst after the final port. Indexed like `config.flows()`.
/// `None` marks an unbounded burst.
pub type BurstTable = Vec<Vec<Option<Q>>>;

pub fn initial_bursts(config: &NetworkConfiguration) -> BurstTable {
    config
        .flows()
        .iter()
        .map(|f| {
            let mut v = vec![None; f.path.len() + 1];
            for slot in v.iter_mut() {
                *slot = Some(f.burst.clone());
            }
            v
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PassOutput {
    pub port_delays: BTreeMap<(PortId, u8), Deviation>,
    pub bursts: BurstTable,
}

/// One TFA++ pass over the ports in `order`, starting from `bursts`.
///
/// Entries behind a non-cut edge are refreshed before they are read; the
/// entries behind cut edges carry the values of the previous pass.
pub fn tfa_pass(
    config: &NetworkConfiguration,
    order: &[PortId],
    bursts: &BurstTable,
    options: &AnalysisOptions,
) -> PassOutput {
    let mut bursts = bursts.clone();
    let mut port_delays = BTreeMap::new();
    let flows = config.flows();
    let mut modes: BTreeMap<(PortId, u8), Result<ServiceMode, NcError>> = BTreeMap::new();
    for (port, p) in config.cbs().keys() {
        if let Some(m) = cbs_parameters(config, port, *p) {
            modes.insert((port.clone(), *p), m);
        }
    }
    let cap_of = |port: &PortId, p: u8| -> Option<PwlCurve> {
        match modes.get(&(port.clone(), p)) {
            Some(Ok(mode)) => cbs_output_cap(mode),
            _ => None,
        }
    };

    for port in order {
        let capacity = config.capacity(port);
        let mut by_priority: BTreeMap<u8, Vec<(usize, usize)>> = BTreeMap::new();
        for &fi in config.flow_indices_through(port) {
            let hop = flows[fi].path.iter().position(|p| p == port).expect("flow crosses port");
            by_priority.entry(flows[fi].priority).or_default().push((fi, hop));
        }
        let mut arrivals: BTreeMap<u8, PwlCurve> = BTreeMap::new();
        for (&p, members) in &by_priority {
            arrivals.insert(p, class_arrival(config, flows, &bursts, members, p, &cap_of, options.packetized_lines));
        }
        for (&p, members) in &by_priority {
            let alpha = &arrivals[&p];
            let delay = match modes.get(&(port.clone(), p)) {
                Some(Ok(ServiceMode::Cbs { idle_slope, latency, .. })) => {
                    let beta = PwlCurve::rate_latency(idle_slope.clone(), latency.clone()).expect("positive");
                    PwlCurve::h_dev(alpha, &beta)
                }
                Some(Err(_)) => Deviation::Unbounded,
                Some(Ok(ServiceMode::NpSp)) | None => {
                    let higher: Vec<PwlCurve> = arrivals
                        .range(..p)
                        .map(|(&k, a)| match cap_of(port, k) {
                            Some(cap) => a.min_of(&cap),
                            None => a.clone(),
                        })
                        .collect();
                    let beta = npsp_leftover(capacity, &higher, &config.max_frame_below(port, p));
                    PwlCurve::h_dev(alpha, &beta)
                }
            };
            for &(fi, hop) in members {
                let next = match (&bursts[fi][hop], &delay) {
                    (Some(b), Deviation::Finite(d)) => {
                        Some(ceil_to_grid(&(b + &flows[fi].rate * d), options.burst_grid))
                    }
                    _ => None,
                };
                bursts[fi][hop + 1] = next;
            }
            port_delays.insert((port.clone(), p), delay);
        }
    }
    PassOutput { port_delays, bursts }
}

/// Aggregate arrival of one class at a port, grouped by upstream port.
fn class_arrival(
    config: &NetworkConfiguration,
    flows: &[Flow],
    bursts: &BurstTable,
    members: &[(usize, usize)],
    priority: u8,
    cap_of: &dyn Fn(&PortId, u8) -> Option<PwlCurve>,
    packetized: bool,
) -> PwlCurve {
    let mut groups: BTreeMap<Option<&PortId>, Vec<(usize, usize)>> = BTreeMap::new();
    for &(fi, hop) in members {
        let upstream = if hop == 0 { None } else { Some(&flows[fi].path[hop - 1]) };
        groups.entry(upstream).or_default().push((fi, hop));
    }
    let mut parts = Vec::new();
    for (upstream, group) in groups {
        let buckets: Option<Vec<PwlCurve>> = group
            .iter()
            .map(|&(fi, hop)| {
                bursts[fi][hop]
                    .as_ref()
                    .map(|b| PwlCurve::leaky_bucket(flows[fi].rate.clone(), b.clone()).expect("valid flow"))
            })
            .collect();
        let curve = match upstream {
            None => PwlCurve::sum(&buckets.expect("source bursts are finite")),
            Some(u) => {
                let frame = if packetized {
                    group.iter().map(|&(fi, _)| flows[fi].max_frame.clone()).max().unwrap_or_else(zero)
                } else {
                    zero()
                };
                let line = PwlCurve::leaky_bucket(config.capacity(u).clone(), frame.clone()).expect("positive");
                let mut c = match buckets {
                    Some(b) => line.min_of(&PwlCurve::sum(&b)),
                    None => line,
                };
                if let Some(cap) = cap_of(u, priority) {
                    let cap = if packetized { cap.add(&PwlCurve::leaky_bucket(zero(), frame).expect("valid")) } else { cap };
                    c = c.min_of(&cap);
                }
                c
            }
        };
        parts.push(curve);
    }
    PwlCurve::sum(&parts)
}

#[derive(Debug, Clone)]
pub struct AnalysisResult {
    /// End-to-end bound per flow, seconds.
    pub per_flow: BTreeMap<FlowId, Deviation>,
    /// Local delay per (port, priority), seconds.
    pub per_port: BTreeMap<(PortId, u8), Deviation>,
    /// d_src: local delay at the source end-system port of each class.
    pub src_delay: BTreeMap<(PortId, u8), Deviation>,
    pub converged: bool,
    pub iterations: usize,
    pub cut_edges: Vec<(PortId, PortId)>,
    pub bursts: BurstTable,
}

impl AnalysisResult {
    pub fn flow_delay(&self, id: &FlowId) -> &Deviation {
        self.per_flow.get(id).unwrap_or(&Deviation::Unbounded)
    }

    pub fn port_delay(&self, port: &PortId, priority: u8) -> Option<&Deviation> {
        self.per_port.get(&(port.clone(), priority))
    }
}

pub fn fp_tfa(config: &NetworkConfiguration) -> AnalysisResult {
    fp_tfa_with(config, &AnalysisOptions::default())
}

pub fn fp_tfa_with(config: &NetworkConfiguration, options: &AnalysisOptions) -> AnalysisResult {
    let graph = config.port_graph();
    let cuts = cut_edges(&graph);
    let cut_set: BTreeSet<(PortId, PortId)> = cuts.iter().cloned().collect();
    let order = topological_order(&graph, &cut_set);
    let flows = config.flows();

    // (flow index, hop index of the burst entry behind a cut edge)
    let mut cut_slots = Vec::new();
    for (fi, f) in flows.iter().enumerate() {
        for (k, w) in f.path.windows(2).enumerate() {
            if cut_set.contains(&(w[0].clone(), w[1].clone())) {
                cut_slots.push((fi, k + 1));
            }
        }
    }

    let mut bursts = initial_bursts(config);
    let mut iterations = 0;
    let mut converged = false;
    let mut last = None;
    while iterations < options.max_iterations {
        iterations += 1;
        let out = tfa_pass(config, &order, &bursts, options);
        let mut stable = true;
        let mut diverged = false;
        for &(fi, k) in &cut_slots {
            match (&bursts[fi][k], &out.bursts[fi][k]) {
                (Some(old), Some(new)) => {
                    if new > &(&flows[fi].burst * &options.divergence_factor) {
                        diverged = true;
                    }
                    if (new - old).abs() > old.abs() * &options.tolerance {
                        stable = false;
                    }
                }
                _ => diverged = true,
            }
        }
        bursts = out.bursts.clone();
        last = Some(out);
        if diverged {
            log::warn!("fixed-point iteration diverged after {iterations} passes");
            break;
        }
        if stable {
            converged = true;
            break;
        }
    }
    if cut_slots.is_empty() && last.is_none() {
        // max_iterations == 0 on a feed-forward graph
        last = Some(tfa_pass(config, &order, &bursts, options));
        bursts = last.as_ref().expect("set").bursts.clone();
    }
    let out = last.expect("at least one pass");
    if !converged {
        log::warn!("no fixed point after {iterations} passes; every flow is unbounded");
    }

    let per_port: BTreeMap<(PortId, u8), Deviation> = if converged {
        out.port_delays
    } else {
        out.port_delays.into_keys().map(|k| (k, Deviation::Unbounded)).collect()
    };
    let src_delay = per_port
        .iter()
        .filter(|((port, _), _)| config.is_end_system_port(port))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let mut result = AnalysisResult {
        per_flow: BTreeMap::new(),
        per_port,
        src_delay,
        converged,
        iterations,
        cut_edges: cuts,
        bursts,
    };
    for f in flows {
        let d = end_to_end_delay(config, f, &result);
        result.per_flow.insert(f.id.clone(), d);
    }
    result
}

/// `d_src + d_prop + Σ d_op` along the flow's path.
pub fn end_to_end_delay(config: &NetworkConfiguration, flow: &Flow, result: &AnalysisResult) -> Deviation {
    let mut total = zero();
    for port in &flow.path {
        match result.port_delay(port, flow.priority) {
            Some(Deviation::Finite(d)) => total += d,
            _ => return Deviation::Unbounded,
        }
        if let Some(op) = config.port(port) {
            total += &op.prop_delay;
        }
    }
    Deviation::Finite(total)
}

/// Microseconds with three decimals, or `inf`.
pub fn format_us(d: &Deviation) -> String {
    match d {
        Deviation::Finite(v) => format_fixed(&seconds_to_us(v), 3),
        Deviation::Unbounded => "inf".to_string(),
    }
}

pub fn deviation_us_f64(d: &Deviation) -> f64 {
    match d {
        Deviation::Finite(v) => crate::rational::to_f64(&seconds_to_us(v)),
        Deviation::Unbounded => f64::INFINITY,
    }
}

/// `Some(true)` iff the bound meets the deadline; `None` for best-effort flows.
pub fn meets_deadline(flow: &Flow, delay: &Deviation) -> Option<bool> {
    let deadline = flow.deadline.as_ref()?;
    Some(match delay {
        Deviation::Finite(d) => d <= deadline,
        Deviation::Unbounded => false,
    })
}

pub const FLOW_CSV_HEADER: &str = "flow,priority,delay_us,deadline_us,schedulable";

pub fn flow_csv_row(flow: &Flow, delay: &Deviation) -> String {
    let deadline = flow.deadline.as_ref().map(|d| format_fixed(&seconds_to_us(d), 3)).unwrap_or_default();
    let sched = match meets_deadline(flow, delay) {
        Some(true) => "true",
        Some(false) => "false",
        None => "",
    };
    format!("{},{},{},{},{}", flow.id, flow.priority, format_us(delay), deadline, sched)
}

impl AnalysisResult {
    pub fn to_csv(&self, config: &NetworkConfiguration) -> String {
        let mut out = String::from(FLOW_CSV_HEADER);
        out.push('\n');
        for f in config.flows() {
            out.push_str(&flow_csv_row(f, self.flow_delay(&f.id)));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self, config: &NetworkConfiguration) -> Value {
        let flows: Vec<Value> = config
            .flows()
            .iter()
            .map(|f| {
                let d = self.flow_delay(&f.id);
                json!({
                    "flow": f.id,
                    "priority": f.priority,
                    "delay_us": d.finite().map(|v| crate::rational::to_f64(&seconds_to_us(v))),
                    "deadline_us": f.deadline.as_ref().map(|v| crate::rational::to_f64(&seconds_to_us(v))),
                    "schedulable": meets_deadline(f, d),
                })
            })
            .collect();
        let ports: Vec<Value> = self
            .per_port
            .iter()
            .map(|((port, p), d)| {
                json!({
                    "port": port,
                    "priority": p,
                    "delay_us": d.finite().map(|v| crate::rational::to_f64(&seconds_to_us(v))),
                })
            })
            .collect();
        let cuts: Vec<Value> = self.cut_edges.iter().map(|(a, b)| json!([a, b])).collect();
        json!({
            "converged": self.converged,
            "iterations": self.iterations,
            "cut_edges": cuts,
            "flows": flows,
            "ports": ports,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{load_configuration, CbsAssignment};

    #[test]
    fn cred_min_examples() {
        let c = q(100_000_000);
        assert_eq!(cred_min(&c, &c, &q(12_000)).unwrap(), zero());
        assert_eq!(cred_min(&q(50_000_000), &c, &q(12_000)).unwrap(), q(-6000));
        assert_eq!(cred_min(&q(25_000_000), &c, &q(8000)).unwrap(), q(-6000));
        assert!(cred_min(&q(200_000_000), &c, &q(8000)).is_err());
    }

    #[test]
    fn cred_max_examples() {
        let c = q(100_000_000);
        assert_eq!(cred_max(&q(50_000_000), &[], &[], &q(12_336), &c).unwrap(), q(6168));
        assert_eq!(cred_max(&q(50_000_000), &[], &[], &zero(), &c).unwrap(), zero());
        let v = cred_max(&q(20_000_000), &[q(-6000)], &[q(50_000_000)], &q(12_000), &c).unwrap();
        assert_eq!(v, q(7200));
        assert_eq!(
            cred_max(&q(1), &[zero()], std::slice::from_ref(&c), &q(1), &c),
            Err(NcError::Saturated)
        );
    }

    #[test]
    fn latency_matches_cred_max_over_idle() {
        let c = q(100_000_000);
        let t = cbs_latency(&[q(-6000)], &[q(50_000_000)], &q(12_000), &c).unwrap();
        let m = cred_max(&q(20_000_000), &[q(-6000)], &[q(50_000_000)], &q(12_000), &c).unwrap();
        assert_eq!(t, m / q(20_000_000));
        assert_eq!(cbs_latency(&[], &[], &q(12_336), &c).unwrap(), ratio(12_336, 100_000_000));
    }

    #[test]
    fn leftover_highest_priority() {
        let c = q(100_000_000);
        let l = npsp_leftover(&c, &[], &q(12_336));
        assert_eq!(l, PwlCurve::rate_latency(c.clone(), ratio(12_336, 100_000_000)).unwrap());
        let starved = npsp_leftover(&c, &[PwlCurve::leaky_bucket(c.clone(), q(1)).unwrap()], &zero());
        assert!(starved.is_zero());
    }

    #[test]
    fn output_arrival_shapes() {
        let c = q(100);
        let alpha = PwlCurve::leaky_bucket(q(10), q(50)).unwrap();
        let out = output_arrival(&alpha, &q(2), &c);
        let expected = PwlCurve::leaky_bucket(c.clone(), zero())
            .unwrap()
            .min_of(&PwlCurve::leaky_bucket(q(10), q(70)).unwrap());
        assert_eq!(out, expected);
        assert_eq!(out.eval(&zero()), zero());
        let slow = PwlCurve::leaky_bucket(q(10), zero()).unwrap();
        assert_eq!(output_arrival(&slow, &zero(), &c), slow);
    }

    fn graph(edges: &[(&str, &str)]) -> PortGraph {
        let mut g = PortGraph::default();
        for (a, b) in edges {
            g.nodes.insert((*a).into());
            g.nodes.insert((*b).into());
            g.edges.insert(((*a).into(), (*b).into()));
        }
        g
    }

    #[test]
    fn cuts_break_every_cycle() {
        let g = graph(&[("s", "a"), ("a", "b"), ("b", "c"), ("c", "a")]);
        let cuts = cut_edges(&g);
        assert_eq!(cuts, vec![("c".into(), "a".into())]);
        let order = topological_order(&g, &cuts.into_iter().collect());
        assert_eq!(order, vec![PortId::from("s"), "a".into(), "b".into(), "c".into()]);
        assert!(cut_edges(&graph(&[("a", "b"), ("b", "c")])).is_empty());
    }

    const LINE: &str = r#"{
        "devices": [
            {"id": "ES0", "kind": "end_system"}, {"id": "ES1", "kind": "end_system"},
            {"id": "SW0", "kind": "switch"}, {"id": "ES2", "kind": "end_system"}
        ],
        "ports": [
            {"id": "ES0_0", "device": "ES0"}, {"id": "ES1_0", "device": "ES1"},
            {"id": "SW0_2", "device": "SW0"}
        ],
        "links": [
            {"fromPort": "ES0_0", "toDevice": "SW0", "capacity_bps": 100e6},
            {"fromPort": "ES1_0", "toDevice": "SW0", "capacity_bps": 100e6},
            {"fromPort": "SW0_2", "toDevice": "ES2", "capacity_bps": 100e6}
        ],
        "flows": [
            {"id": "hi", "priority": 0, "rate_bps": 10e6, "burst_bits": 10000, "deadline_us": 1000,
             "path": ["ES0_0", "SW0_2"]},
            {"id": "lo", "priority": 1, "rate_bps": 1e6, "burst_bits": 1000, "deadline_us": 1000,
             "path": ["ES1_0", "SW0_2"]}
        ]
    }"#;

    #[test]
    fn single_flow_single_port_closed_form() {
        let c = load_configuration(LINE).unwrap();
        let r = fp_tfa(&c);
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        // source port: b/C
        let src = r.port_delay(&"ES0_0".into(), 0).unwrap();
        assert_eq!(src, &Deviation::Finite(ratio(10_000, 100_000_000)));
        // switch, p0: line cap breaks at b'/(C − r); blocking L = 1000 bits
        let b1 = q(10_000) + q(10_000_000) * ratio(10_000, 100_000_000);
        let beta = PwlCurve::rate_latency(q(100_000_000), ratio(1000, 100_000_000)).unwrap();
        let alpha = output_arrival(
            &PwlCurve::leaky_bucket(q(10_000_000), q(10_000)).unwrap(),
            &ratio(10_000, 100_000_000),
            &q(100_000_000),
        );
        assert_eq!(alpha.eval(&q(1)), b1 + q(10_000_000));
        let sw = r.port_delay(&"SW0_2".into(), 0).unwrap();
        assert_eq!(sw, &PwlCurve::h_dev(&alpha, &beta));
        let total = r.flow_delay(&"hi".into()).finite().unwrap().clone();
        assert_eq!(total, src.finite().unwrap() + sw.finite().unwrap());
    }

    #[test]
    fn cbs_on_higher_class_never_hurts_lower_class() {
        let c = load_configuration(LINE).unwrap();
        let before = fp_tfa(&c);
        let shaped = c.with_cbs(CbsAssignment { port: "SW0_2".into(), priority: 0, idle_slope: q(20_000_000) });
        let after = fp_tfa(&shaped);
        let lo: FlowId = "lo".into();
        assert!(after.flow_delay(&lo).finite().unwrap() <= before.flow_delay(&lo).finite().unwrap());
        let hi: FlowId = "hi".into();
        assert!(after.flow_delay(&hi).finite().unwrap() >= before.flow_delay(&hi).finite().unwrap());
    }

    #[test]
    fn packetized_line_adds_a_frame_to_the_cap() {
        let c = load_configuration(LINE).unwrap();
        let options = AnalysisOptions { packetized_lines: true, ..AnalysisOptions::default() };
        let r = fp_tfa_with(&c, &options);
        let b1 = q(10_000) + q(10_000_000) * ratio(10_000, 100_000_000);
        let alpha = PwlCurve::leaky_bucket(q(100_000_000), q(10_000))
            .unwrap()
            .min_of(&PwlCurve::leaky_bucket(q(10_000_000), b1).unwrap());
        let beta = PwlCurve::rate_latency(q(100_000_000), ratio(1000, 100_000_000)).unwrap();
        let sw = r.port_delay(&"SW0_2".into(), 0).unwrap();
        assert_eq!(sw, &PwlCurve::h_dev(&alpha, &beta));
        assert!(sw.finite().unwrap() > fp_tfa(&c).port_delay(&"SW0_2".into(), 0).unwrap().finite().unwrap());
    }

    #[test]
    fn overload_is_unbounded() {
        let text = LINE.replace(r#""rate_bps": 10e6"#, r#""rate_bps": 100e6"#);
        let c = load_configuration(&text).unwrap();
        let r = fp_tfa(&c);
        assert!(r.flow_delay(&"lo".into()).is_unbounded());
    }
}
