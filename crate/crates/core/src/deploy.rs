//! Partial CBS deployment.
//!
//! [`run_framework`] alternates schedulability verification and
//! [`partial_cbs_deployment`] until every flow meets its deadline. A
//! deployment round either shrinks the margin of the CBS already placed
//! (when a shaped flow misses its deadline) or places new CBS on as few
//! devices as it can (when non-shaped flows miss theirs).
//!
//! IdleSlopes come from per-port local deadlines: a flow's end-to-end
//! budget is split over the ports of its path in proportion to the class
//! rate at each port, and the IdleSlope must drain the class burst within
//! `margin · D_op − T`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_traits::{Signed, Zero};
use serde_json::{json, Value};
use thiserror::Error;

use crate::curves::Deviation;
use crate::model::{
    max_reservable_fraction, CbsAssignment, DeviceId, FlowId, NetworkConfiguration, PortId, Violation,
};
use crate::nc::{self, NcError};
use crate::rational::{format_fixed, one, ratio, seconds_to_us, to_f64, zero, Q};
use crate::verify::{self, Schedulability, Slack};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeployError {
    #[error("no flow of priority {priority} crosses {port}")]
    NoFlows { port: PortId, priority: u8 },
    #[error("flow {0} at the port has no deadline")]
    NoDeadline(FlowId),
    #[error("source delay of flow {0} is unbounded")]
    UnboundedSource(FlowId),
    #[error("local deadline at {port}/p{priority} is not positive")]
    NonPositiveDeadline { port: PortId, priority: u8 },
    #[error("margin too small for {port}/p{priority}: margin·D_op does not exceed the latency factor")]
    MarginTooSmall { port: PortId, priority: u8 },
    #[error("IdleSlopes at {port} exceed 75% of its capacity")]
    Bandwidth { port: PortId },
    #[error(transparent)]
    Nc(#[from] NcError),
    #[error("step rho must be positive")]
    BadStep,
    #[error("margin must lie in (0, 1]")]
    BadMargin,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalDeadline {
    pub port: PortId,
    pub priority: u8,
    /// D_op^p in seconds.
    pub value: Q,
    /// Flow achieving the minimum.
    pub f_verif: FlowId,
}

/// Local deadline of `(port, p)`: the tightest proportional share of the
/// end-to-end budget `D − d_src − d_prop` among the flows of the class.
pub fn local_deadline(
    config: &NetworkConfiguration,
    port: &PortId,
    priority: u8,
    analysis: &nc::AnalysisResult,
) -> Result<LocalDeadline, DeployError> {
    let flows = config.flows_at(port, priority);
    if flows.is_empty() {
        return Err(DeployError::NoFlows { port: port.clone(), priority });
    }
    let rate_here = config.aggregate_rate(port, priority);
    let mut best: Option<(Q, FlowId)> = None;
    for f in flows {
        let deadline = f.deadline.as_ref().ok_or_else(|| DeployError::NoDeadline(f.id.clone()))?;
        let d_src = match analysis.port_delay(f.source_port(), priority) {
            Some(Deviation::Finite(d)) => d.clone(),
            _ => return Err(DeployError::UnboundedSource(f.id.clone())),
        };
        let d_prop = f.path.iter().fold(zero(), |acc, p| acc + &config.port(p).expect("valid path").prop_delay);
        let rate_sum = f.path[1..].iter().fold(zero(), |acc, p| acc + config.aggregate_rate(p, priority));
        // single-port path: the source port gets the whole budget
        let share = if rate_sum.is_zero() { one() } else { &rate_here / rate_sum };
        let value = (deadline - d_src - d_prop) * share;
        let better = match &best {
            None => true,
            Some((v, id)) => &value < v || (&value == v && &f.id < id),
        };
        if better {
            best = Some((value, f.id.clone()));
        }
    }
    let (value, f_verif) = best.expect("non-empty class");
    if !value.is_positive() {
        return Err(DeployError::NonPositiveDeadline { port: port.clone(), priority });
    }
    Ok(LocalDeadline { port: port.clone(), priority, value, f_verif })
}

/// Latency factor of a CBS at `(port, p)` given the CBS already configured
/// at the higher priorities of the port.
pub fn latency_factor(config: &NetworkConfiguration, port: &PortId, priority: u8) -> Result<Q, DeployError> {
    let capacity = config.capacity(port);
    let mut mins = Vec::new();
    let mut idles = Vec::new();
    for k in 0..priority {
        let Some(ik) = config.idle_slope(port, k) else {
            return Err(NcError::NonContiguous { port: port.clone(), priority }.into());
        };
        mins.push(nc::cred_min(ik, capacity, &config.max_frame_of(port, k))?);
        idles.push(ik.clone());
    }
    Ok(nc::cbs_latency(&mins, &idles, &config.max_frame_below(port, priority), capacity)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdleSlopeChoice {
    /// Exact lower bound `Σ b / (m·D_op − T)`.
    pub minimum: Q,
    /// Value to configure: the bound clamped to the class rate, rounded up
    /// to a whole bit per second.
    pub configured: Q,
    pub deadline: LocalDeadline,
    pub latency: Q,
}

/// Minimum IdleSlope of `(port, p)` under `margin`.
pub fn min_idle_slope(
    config: &NetworkConfiguration,
    port: &PortId,
    priority: u8,
    margin: &Q,
    analysis: &nc::AnalysisResult,
) -> Result<IdleSlopeChoice, DeployError> {
    let deadline = local_deadline(config, port, priority, analysis)?;
    let latency = latency_factor(config, port, priority)?;
    let den = margin * &deadline.value - &latency;
    if !den.is_positive() {
        return Err(DeployError::MarginTooSmall { port: port.clone(), priority });
    }
    let bursts = config.flows_at(port, priority).iter().fold(zero(), |acc, f| acc + &f.burst);
    let minimum = bursts / den;
    let rate = config.aggregate_rate(port, priority);
    let clamped = if minimum < rate { rate } else { minimum.clone() };
    Ok(IdleSlopeChoice { minimum, configured: clamped.ceil(), deadline, latency })
}

/// Smallest priority of `port` without a CBS, provided its traffic is all
/// schedulable and a CBS there keeps the port's CBS contiguous.
pub fn highest_non_shaped_priority(
    config: &NetworkConfiguration,
    port: &PortId,
    sched: &Schedulability,
) -> Option<u8> {
    let p = (0..crate::model::PRIORITY_LEVELS).find(|&p| !config.has_cbs(port, p))?;
    let flows = config.flows_at(port, p);
    if flows.is_empty() {
        return None;
    }
    let all_ok = flows.iter().all(|f| f.deadline.is_none() || sched.is_schedulable(&f.id));
    let has_deadline = flows.iter().any(|f| f.deadline.is_some());
    (all_ok && has_deadline).then_some(p)
}

/// Priority to shape at `port` on behalf of a flow of priority `below`.
fn shapeable_priority(config: &NetworkConfiguration, port: &PortId, below: u8, sched: &Schedulability) -> Option<u8> {
    if !config.cbs_capable(port) {
        return None;
    }
    highest_non_shaped_priority(config, port, sched).filter(|&p| p < below)
}

/// Most constrained unscheduled non-shaped flow: largest `d − D` among the
/// highest priority present, ties to the smallest id.
pub fn most_constrained_flow(
    config: &NetworkConfiguration,
    unsched_non_shaped: &BTreeSet<FlowId>,
    sched: &Schedulability,
) -> Option<FlowId> {
    let top = unsched_non_shaped.iter().filter_map(|id| config.flow(id)).map(|f| f.priority).min()?;
    let mut best: Option<(&Slack, &FlowId)> = None;
    for id in unsched_non_shaped {
        let Some(f) = config.flow(id) else { continue };
        if f.priority != top {
            continue;
        }
        let slack = &sched.slack[id];
        if best.is_none_or(|(s, _)| slack > s) {
            best = Some((slack, id));
        }
    }
    best.map(|(_, id)| id.clone())
}

/// First device on the path of `foi`, not excluded, holding a port of that
/// path where a higher priority can still be shaped.
pub fn select_device(
    config: &NetworkConfiguration,
    foi: &FlowId,
    excluded: &BTreeSet<DeviceId>,
    sched: &Schedulability,
) -> Option<DeviceId> {
    let flow = config.flow(foi)?;
    flow.path.iter().find_map(|port| {
        let dev = config.device_of(port);
        if excluded.contains(dev) {
            return None;
        }
        shapeable_priority(config, port, flow.priority, sched).map(|_| dev.clone())
    })
}

/// Ports of `dev` where a priority above `below` can be shaped, sorted by
/// the largest slack of the unscheduled non-shaped flows crossing them
/// (descending; ports without such flows last), then by id.
pub fn ordered_ports(
    config: &NetworkConfiguration,
    dev: &DeviceId,
    below: u8,
    unsched_non_shaped: &BTreeSet<FlowId>,
    sched: &Schedulability,
) -> Vec<PortId> {
    let mut ports: Vec<(Option<&Slack>, PortId)> = config
        .ports_of_device(dev)
        .into_iter()
        .filter(|p| shapeable_priority(config, p, below, sched).is_some())
        .map(|p| {
            let worst = config
                .flows_through(p)
                .iter()
                .filter(|f| unsched_non_shaped.contains(&f.id))
                .map(|f| &sched.slack[&f.id])
                .max();
            (worst, p.clone())
        })
        .collect();
    ports.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    ports.into_iter().map(|(_, p)| p).collect()
}

#[derive(Debug, Clone)]
pub struct DeploymentState {
    pub margin: Q,
    pub rho: Q,
    pub devs_to_exclude: BTreeSet<DeviceId>,
    pub shaped_flows: BTreeSet<FlowId>,
    pub unsched_shaped: BTreeSet<FlowId>,
    pub unsched_non_shaped: BTreeSet<FlowId>,
    /// Every CBS placed by this framework run, in placement order.
    pub placed: Vec<CbsAssignment>,
    /// While-iterations of the last placement branch.
    pub while_iterations: usize,
    /// Margin at or below which no further reconfiguration is attempted.
    pub last_floor: Option<Q>,
}

impl DeploymentState {
    pub fn new(margin: Q, rho: Q) -> Result<Self, DeployError> {
        if !rho.is_positive() {
            return Err(DeployError::BadStep);
        }
        if !margin.is_positive() || margin > one() {
            return Err(DeployError::BadMargin);
        }
        Ok(DeploymentState {
            margin,
            rho,
            devs_to_exclude: BTreeSet::new(),
            shaped_flows: BTreeSet::new(),
            unsched_shaped: BTreeSet::new(),
            unsched_non_shaped: BTreeSet::new(),
            placed: Vec::new(),
            while_iterations: 0,
            last_floor: None,
        })
    }
}

/// Smallest usable margin: `max T_op/D_op` over the placed classes, the
/// part of each local delay that no IdleSlope can remove. `None` when a
/// local deadline or latency factor cannot be computed.
pub fn margin_floor(
    config: &NetworkConfiguration,
    placed: &[(PortId, u8)],
    analysis: &nc::AnalysisResult,
) -> Option<Q> {
    let mut floor: Option<Q> = None;
    for (port, p) in placed {
        let ld = local_deadline(config, port, *p, analysis).ok()?;
        let t = latency_factor(config, port, *p).ok()?;
        let ratio = t / ld.value;
        if floor.as_ref().is_none_or(|f| &ratio > f) {
            floor = Some(ratio);
        }
    }
    floor
}

/// `m ← m − ρ`; `false` when the new margin reaches `floor` (no solution).
pub fn update_margin(state: &mut DeploymentState, floor: &Q) -> bool {
    state.margin = &state.margin - &state.rho;
    state.last_floor = Some(floor.clone());
    state.margin > *floor && state.margin.is_positive()
}

/// Recompute the IdleSlope of every CBS in `classes` with `margin`, port by
/// port in priority order, checking the 75% bound.
pub fn recompute_idle_slopes(
    config: &NetworkConfiguration,
    classes: &[(PortId, u8)],
    margin: &Q,
    analysis: &nc::AnalysisResult,
) -> Result<NetworkConfiguration, DeployError> {
    let mut sorted: Vec<&(PortId, u8)> = classes.iter().collect();
    sorted.sort();
    let mut next = config.clone();
    for (port, p) in sorted {
        let choice = min_idle_slope(&next, port, *p, margin, analysis)?;
        next = next.with_cbs(CbsAssignment { port: port.clone(), priority: *p, idle_slope: choice.configured });
        if next.reserved_bandwidth(port) > config.capacity(port) * max_reservable_fraction() {
            return Err(DeployError::Bandwidth { port: port.clone() });
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepAction {
    /// New CBS were placed.
    Placement { placements: Vec<CbsAssignment>, devices: Vec<DeviceId>, while_iterations: usize },
    /// IdleSlopes were recomputed with a smaller margin.
    Reconfiguration { margin: Q },
    /// Nothing to do.
    Unchanged,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NoSolution {
    /// The margin reached its theoretical floor.
    MarginFloor { margin: Q, floor: Q },
    /// No device on the most constrained flow's path can take a CBS.
    NoEligibleDevice { foi: FlowId },
    /// A recomputed IdleSlope broke a constraint.
    Recompute(DeployError),
}

impl fmt::Display for NoSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoSolution::MarginFloor { margin, floor } => write!(
                f,
                "margin {} reached its floor {}",
                format_fixed(margin, 4),
                format_fixed(floor, 4)
            ),
            NoSolution::NoEligibleDevice { foi } => write!(f, "no eligible device on the path of {foi}"),
            NoSolution::Recompute(e) => write!(f, "IdleSlope recomputation failed: {e}"),
        }
    }
}

/// One invocation of the partial CBS algorithm.
pub fn partial_cbs_deployment(
    state: &mut DeploymentState,
    config: &NetworkConfiguration,
    sched: &Schedulability,
) -> Result<(NetworkConfiguration, StepAction), NoSolution> {
    state.unsched_shaped = sched.unsched_shaped.clone();
    state.unsched_non_shaped = sched.unsched_non_shaped.clone();
    state.while_iterations = 0;
    let analysis = &sched.analysis;

    if !state.unsched_shaped.is_empty() {
        let classes: Vec<(PortId, u8)> = state.placed.iter().map(|a| (a.port.clone(), a.priority)).collect();
        let floor = margin_floor(config, &classes, analysis).unwrap_or_else(one);
        if !update_margin(state, &floor) {
            return Err(NoSolution::MarginFloor { margin: state.margin.clone(), floor });
        }
        let next = recompute_idle_slopes(config, &classes, &state.margin, analysis).map_err(NoSolution::Recompute)?;
        for a in state.placed.iter_mut() {
            a.idle_slope = next.idle_slope(&a.port, a.priority).expect("placed").clone();
        }
        return Ok((next, StepAction::Reconfiguration { margin: state.margin.clone() }));
    }

    if state.unsched_non_shaped.is_empty() {
        return Ok((config.clone(), StepAction::Unchanged));
    }

    state.devs_to_exclude.clear();
    state.shaped_flows.clear();
    let mut next = config.clone();
    let mut placements = Vec::new();
    let mut devices = Vec::new();
    while !state.unsched_non_shaped.is_empty() {
        state.while_iterations += 1;
        let foi = most_constrained_flow(&next, &state.unsched_non_shaped, sched).expect("non-empty set");
        let foi_flow = next.flow(&foi).expect("known flow").clone();
        let dev = 'device: loop {
            let Some(dev) = select_device(&next, &foi, &state.devs_to_exclude, sched) else {
                return Err(NoSolution::NoEligibleDevice { foi });
            };
            log::debug!("foi {foi}: selected device {dev}");
            for op in ordered_ports(&next, &dev, foi_flow.priority, &state.unsched_non_shaped, sched) {
                let Some(p) = shapeable_priority(&next, &op, foi_flow.priority, sched) else { continue };
                let choice = min_idle_slope(&next, &op, p, &state.margin, analysis);
                let limit = next.capacity(&op) * max_reservable_fraction();
                let fits = match &choice {
                    Ok(c) => next.reserved_bandwidth(&op) + &c.configured <= limit,
                    Err(e) => {
                        log::debug!("{op}/p{p}: {e}");
                        false
                    }
                };
                if fits {
                    let c = choice.expect("fits");
                    log::debug!(
                        "place CBS {op}/p{p} I={} (f_verif {})",
                        format_fixed(&c.configured, 0),
                        c.deadline.f_verif
                    );
                    let a = CbsAssignment { port: op.clone(), priority: p, idle_slope: c.configured };
                    next = next.with_cbs(a.clone());
                    state.placed.push(a.clone());
                    placements.push(a);
                    for f in next.flows_at(&op, p) {
                        state.shaped_flows.insert(f.id.clone());
                    }
                } else if foi_flow.crosses(&op) {
                    state.devs_to_exclude.insert(dev.clone());
                    continue 'device;
                }
            }
            break dev;
        };
        if !devices.contains(&dev) {
            devices.push(dev.clone());
        }
        let on_dev: BTreeSet<FlowId> = next.flows_of_device(&dev).iter().map(|f| f.id.clone()).collect();
        let da: BTreeSet<FlowId> = state.unsched_non_shaped.intersection(&on_dev).cloned().collect();
        let mut touched: BTreeSet<&PortId> = BTreeSet::new();
        for id in da.iter().chain(state.shaped_flows.iter()) {
            touched.extend(next.flow(id).expect("known flow").path.iter());
        }
        let ia: BTreeSet<FlowId> = state
            .unsched_non_shaped
            .iter()
            .filter(|id| !on_dev.contains(*id))
            .filter(|id| next.flow(id).expect("known flow").path.iter().any(|p| touched.contains(p)))
            .cloned()
            .collect();
        debug_assert!(da.contains(&foi), "foi crosses the selected device");
        log::debug!("DA {:?} IA {:?}", da, ia);
        state.unsched_non_shaped.retain(|id| !da.contains(id) && !ia.contains(id));
    }
    let action = StepAction::Placement { placements, devices, while_iterations: state.while_iterations };
    Ok((next, action))
}

#[derive(Debug, Clone)]
pub struct DeployOptions {
    pub margin: Q,
    pub rho: Q,
    pub max_rounds: usize,
}

impl Default for DeployOptions {
    fn default() -> Self {
        DeployOptions { margin: one(), rho: ratio(1, 20), max_rounds: 50 }
    }
}

#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: usize,
    pub margin: Q,
    pub action: StepAction,
    pub unsched_shaped: usize,
    pub unsched_non_shaped: usize,
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Success,
    Infeasible(NoSolution),
    BudgetExceeded,
    PreconditionViolated(Vec<FlowId>),
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Success => "SUCCESS",
            Outcome::Infeasible(_) => "INFEASIBLE",
            Outcome::BudgetExceeded => "BUDGET_EXCEEDED",
            Outcome::PreconditionViolated(_) => "PRECONDITION_VIOLATED",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrameworkOutcome {
    pub outcome: Outcome,
    /// Last configuration produced (the enriched configuration on success).
    pub config: NetworkConfiguration,
    /// Verification of `config`.
    pub schedulability: Schedulability,
    pub trace: Vec<RoundRecord>,
    pub state: DeploymentState,
}

impl FrameworkOutcome {
    /// Deployment rounds that placed at least one CBS.
    pub fn placement_rounds(&self) -> usize {
        self.trace.iter().filter(|r| matches!(r.action, StepAction::Placement { .. })).count()
    }

    pub fn max_while_iterations(&self) -> usize {
        self.trace
            .iter()
            .map(|r| match &r.action {
                StepAction::Placement { while_iterations, .. } => *while_iterations,
                _ => 0,
            })
            .max()
            .unwrap_or(0)
    }
}

/// Verification/deployment loop.
pub fn run_framework(config: &NetworkConfiguration, options: &DeployOptions) -> Result<FrameworkOutcome, DeployError> {
    let mut state = DeploymentState::new(options.margin.clone(), options.rho.clone())?;
    let mut current = config.clone();
    let mut sched = verify::verify_schedulability(&current);
    let mut trace = Vec::new();
    let pre = verify::precondition_violations(&current, &sched);
    if !pre.is_empty() {
        return Ok(FrameworkOutcome {
            outcome: Outcome::PreconditionViolated(pre),
            config: current,
            schedulability: sched,
            trace,
            state,
        });
    }
    let mut round = 0;
    let outcome = loop {
        if sched.all_schedulable() {
            break Outcome::Success;
        }
        if round >= options.max_rounds {
            break Outcome::BudgetExceeded;
        }
        round += 1;
        let (unsched_shaped, unsched_non_shaped) = (sched.unsched_shaped.len(), sched.unsched_non_shaped.len());
        match partial_cbs_deployment(&mut state, &current, &sched) {
            Ok((next, action)) => {
                let violations: Vec<Violation> = next.validate();
                assert!(violations.is_empty(), "deployment produced an invalid configuration: {violations:?}");
                log::info!("round {round}: {}", describe(&action));
                trace.push(RoundRecord {
                    round,
                    margin: state.margin.clone(),
                    action: action.clone(),
                    unsched_shaped,
                    unsched_non_shaped,
                });
                if action == StepAction::Unchanged {
                    break Outcome::BudgetExceeded;
                }
                current = next;
                sched = verify::verify_schedulability(&current);
            }
            Err(reason) => {
                log::info!("round {round}: no solution ({reason})");
                break Outcome::Infeasible(reason);
            }
        }
    };
    Ok(FrameworkOutcome { outcome, config: current, schedulability: sched, trace, state })
}

fn describe(action: &StepAction) -> String {
    match action {
        StepAction::Placement { placements, devices, .. } => format!(
            "placed {} CBS on {}",
            placements.len(),
            devices.iter().map(|d| d.as_str()).collect::<Vec<_>>().join(", ")
        ),
        StepAction::Reconfiguration { margin } => format!("margin lowered to {}", format_fixed(margin, 4)),
        StepAction::Unchanged => "unchanged".into(),
    }
}

/// Every `(port, p)` that would carry a CBS in a full deployment: every
/// CBS-capable port, for each priority with deadline traffic, contiguous
/// from priority 0.
pub fn full_cbs_candidates(config: &NetworkConfiguration) -> Vec<(PortId, u8)> {
    let mut out = Vec::new();
    for port in config.ports() {
        if !config.cbs_capable(&port.id) {
            continue;
        }
        for p in 0..crate::model::PRIORITY_LEVELS {
            let flows = config.flows_at(&port.id, p);
            if flows.is_empty() || flows.iter().any(|f| f.deadline.is_none()) {
                break;
            }
            out.push((port.id.clone(), p));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub config: NetworkConfiguration,
    pub schedulability: Schedulability,
    pub margin: Q,
    pub candidates: usize,
    /// Candidates left unshaped because no IdleSlope satisfies them.
    pub dropped: Vec<(PortId, u8)>,
    /// Why the baseline could not schedule every flow, if it could not.
    pub failure: Option<String>,
}

/// Full CBS deployment with minimum IdleSlopes, lowering the margin while
/// shaped flows miss their deadlines.
pub fn full_cbs_baseline(config: &NetworkConfiguration, options: &DeployOptions) -> Result<BaselineOutcome, DeployError> {
    let base = config.without_cbs();
    let analysis = nc::fp_tfa(&base);
    let mut classes = full_cbs_candidates(config);
    let candidates = classes.len();
    let mut dropped = Vec::new();
    let mut margin = options.margin.clone();
    let mut current = settle_classes(&base, &mut classes, &mut dropped, &margin, &analysis)?;
    let mut sched = verify::verify_schedulability(&current);
    let mut rounds = 0;
    let failure = loop {
        if sched.unsched_shaped.is_empty() {
            break None;
        }
        if rounds >= options.max_rounds {
            break Some("round budget exhausted".to_string());
        }
        rounds += 1;
        let floor = margin_floor(&current, &classes, &sched.analysis).unwrap_or_else(one);
        margin = &margin - &options.rho;
        if margin <= floor || !margin.is_positive() {
            break Some(format!("margin reached its floor {}", format_fixed(&floor, 4)));
        }
        match settle_classes(&base, &mut classes, &mut dropped, &margin, &analysis) {
            Ok(next) => current = next,
            Err(e) => break Some(e.to_string()),
        }
        sched = verify::verify_schedulability(&current);
    };
    Ok(BaselineOutcome { config: current, schedulability: sched, margin, candidates, dropped, failure })
}

/// Configure `classes`, dropping each class whose IdleSlope cannot be set
/// (together with the lower priorities of its port) until the rest fits.
fn settle_classes(
    base: &NetworkConfiguration,
    classes: &mut Vec<(PortId, u8)>,
    dropped: &mut Vec<(PortId, u8)>,
    margin: &Q,
    analysis: &nc::AnalysisResult,
) -> Result<NetworkConfiguration, DeployError> {
    loop {
        let err = match recompute_idle_slopes(base, classes, margin, analysis) {
            Ok(next) => return Ok(next),
            Err(e) => e,
        };
        let (port, from) = match &err {
            DeployError::MarginTooSmall { port, priority } | DeployError::NonPositiveDeadline { port, priority } => {
                (port.clone(), *priority)
            }
            DeployError::Bandwidth { port } => {
                let top = classes.iter().filter(|(q, _)| q == port).map(|(_, k)| *k).max();
                match top {
                    Some(k) => (port.clone(), k),
                    None => return Err(err),
                }
            }
            _ => return Err(err),
        };
        log::debug!("baseline drops {port}/p{from} and below: {err}");
        let before = classes.len();
        classes.retain(|(q, k)| {
            let drop = q == &port && *k >= from;
            if drop {
                dropped.push((q.clone(), *k));
            }
            !drop
        });
        if classes.len() == before {
            return Err(err);
        }
    }
}

/// `used` out of `total` resources.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reduction {
    pub used: usize,
    pub total: usize,
}

impl Reduction {
    /// `1 − used/total` in percent; zero when there is nothing to reduce.
    pub fn percent(&self) -> Q {
        if self.total == 0 {
            return zero();
        }
        (one() - ratio(self.used as i64, self.total as i64)) * Q::from_integer(100.into())
    }

    pub fn to_string_pct(&self) -> String {
        let pct = self.percent();
        format!("{}/{} ({}% fewer, {})", self.used, self.total, pct.floor(), format_fixed(&pct, 1))
    }
}

/// Devices that could host a CBS: those owning a CBS-capable port.
pub fn cbs_capable_devices(config: &NetworkConfiguration) -> BTreeSet<DeviceId> {
    config.ports().filter(|p| config.cbs_capable(&p.id)).map(|p| p.device.clone()).collect()
}

/// TSN devices and CBS instances of `deployed` against every CBS-capable
/// device and every full-deployment candidate of `config`.
pub fn reductions(config: &NetworkConfiguration, deployed: &NetworkConfiguration) -> (Reduction, Reduction) {
    (
        Reduction { used: deployed.tsn_devices().len(), total: cbs_capable_devices(config).len() },
        Reduction { used: deployed.cbs_count(), total: full_cbs_candidates(config).len() },
    )
}

pub const PLACEMENT_CSV_HEADER: &str = "device,port,priority,idleslope_bps";

/// Placement table, one row per CBS, sorted by port and priority.
pub fn placement_csv(config: &NetworkConfiguration) -> String {
    let mut out = format!("{PLACEMENT_CSV_HEADER}\n");
    for a in config.cbs_assignments() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            config.device_of(&a.port),
            a.port,
            a.priority,
            format_fixed(&a.idle_slope, 0)
        ));
    }
    out
}

pub fn placement_json(config: &NetworkConfiguration) -> Value {
    let rows: Vec<Value> = config
        .cbs_assignments()
        .iter()
        .map(|a| {
            json!({
                "device": config.device_of(&a.port),
                "port": a.port,
                "priority": a.priority,
                "idleslope_bps": to_f64(&a.idle_slope),
            })
        })
        .collect();
    Value::Array(rows)
}

/// Framework trace as CSV.
pub fn trace_csv(trace: &[RoundRecord]) -> String {
    let mut out = String::from("round,action,margin,placements,unsched_shaped,unsched_nonshaped\n");
    for r in trace {
        let (action, placements) = match &r.action {
            StepAction::Placement { placements, .. } => (
                "placement",
                placements.iter().map(|a| format!("{}/p{}", a.port, a.priority)).collect::<Vec<_>>().join(" "),
            ),
            StepAction::Reconfiguration { .. } => ("reconfiguration", String::new()),
            StepAction::Unchanged => ("unchanged", String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.round,
            action,
            format_fixed(&r.margin, 4),
            placements,
            r.unsched_shaped,
            r.unsched_non_shaped
        ));
    }
    out
}

/// Local deadline in microseconds, for reports.
pub fn local_deadline_us(ld: &LocalDeadline) -> String {
    format_fixed(&seconds_to_us(&ld.value), 3)
}

/// Placements grouped per device, for summaries.
pub fn placements_by_device(config: &NetworkConfiguration) -> BTreeMap<DeviceId, Vec<CbsAssignment>> {
    let mut out: BTreeMap<DeviceId, Vec<CbsAssignment>> = BTreeMap::new();
    for a in config.cbs_assignments() {
        out.entry(config.device_of(&a.port).clone()).or_default().push(a);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_configuration;
    use crate::rational::q;

    const NET: &str = r#"{
        "devices": [
            {"id": "A", "kind": "end_system"}, {"id": "B", "kind": "end_system"},
            {"id": "S", "kind": "switch"}, {"id": "Z", "kind": "end_system"}
        ],
        "ports": [{"id": "A0", "device": "A"}, {"id": "B0", "device": "B"}, {"id": "S0", "device": "S"}],
        "links": [
            {"fromPort": "A0", "toDevice": "S", "capacity_bps": 100e6},
            {"fromPort": "B0", "toDevice": "S", "capacity_bps": 100e6},
            {"fromPort": "S0", "toDevice": "Z", "capacity_bps": 100e6}
        ],
        "flows": [
            {"id": "h", "priority": 0, "rate_bps": 20e6, "burst_bits": 40000, "deadline_us": 2000, "path": ["A0", "S0"]},
            {"id": "m", "priority": 1, "rate_bps": 1e6, "burst_bits": 1000, "deadline_us": 300, "path": ["B0", "S0"]}
        ]
    }"#;

    #[test]
    fn single_hop_local_deadline_is_full_budget() {
        let c = load_configuration(NET).unwrap();
        let a = nc::fp_tfa(&c);
        let ld = local_deadline(&c, &"A0".into(), 0, &a).unwrap();
        let d_src = a.port_delay(&"A0".into(), 0).unwrap().finite().unwrap().clone();
        assert_eq!(ld.value, ratio(2000, 1_000_000) - d_src);
        assert_eq!(ld.f_verif, FlowId::from("h"));
    }

    #[test]
    fn latency_factor_closed_forms() {
        let c = load_configuration(NET).unwrap();
        let port: PortId = "S0".into();
        // lower-priority frame is m's 1000 bits
        assert_eq!(latency_factor(&c, &port, 0).unwrap(), ratio(1000, 100_000_000));
        let stacked = c.with_cbs(CbsAssignment { port: port.clone(), priority: 0, idle_slope: q(50_000_000) });
        let t1 = latency_factor(&stacked, &port, 1).unwrap();
        let cm0 = nc::cred_min(&q(50_000_000), &q(100_000_000), &q(12_336)).unwrap();
        assert_eq!(t1, cm0 / q(-50_000_000));
        assert!(latency_factor(&c, &port, 1).is_err());
    }

    #[test]
    fn idle_slope_grows_as_margin_shrinks() {
        let c = load_configuration(NET).unwrap();
        let a = nc::fp_tfa(&c);
        let port: PortId = "S0".into();
        let hi = min_idle_slope(&c, &port, 0, &one(), &a).unwrap();
        let lo = min_idle_slope(&c, &port, 0, &ratio(1, 2), &a).unwrap();
        assert!(lo.minimum > hi.minimum);
        assert!(hi.configured >= q(20_000_000));
        assert!(matches!(
            min_idle_slope(&c, &port, 0, &ratio(1, 1_000_000), &a),
            Err(DeployError::MarginTooSmall { .. })
        ));
    }

    #[test]
    fn margin_update() {
        let mut s = DeploymentState::new(one(), ratio(1, 20)).unwrap();
        assert!(update_margin(&mut s, &ratio(1, 2)));
        assert_eq!(s.margin, ratio(19, 20));
        assert!(!update_margin(&mut s, &ratio(9, 10)));
        assert!(DeploymentState::new(one(), zero()).is_err());
    }

    #[test]
    fn already_schedulable_is_untouched() {
        let c = load_configuration(&NET.replace(r#""deadline_us": 300"#, r#""deadline_us": 30000"#)).unwrap();
        let out = run_framework(&c, &DeployOptions::default()).unwrap();
        assert!(matches!(out.outcome, Outcome::Success));
        assert_eq!(out.config, c);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn places_cbs_on_the_switch() {
        let c = load_configuration(NET).unwrap();
        let before = verify::verify_schedulability(&c);
        assert!(before.unsched_non_shaped.contains(&"m".into()));
        let out = run_framework(&c, &DeployOptions::default()).unwrap();
        assert!(matches!(out.outcome, Outcome::Success), "{:?}", out.outcome);
        assert_eq!(out.config.cbs_assignments().len(), 1);
        assert!(out.config.has_cbs(&"S0".into(), 0));
        assert!(out.config.validate().is_empty());
        assert_eq!(full_cbs_candidates(&c), vec![(PortId::from("S0"), 0), (PortId::from("S0"), 1)]);
    }

    #[test]
    fn reduction_percentages() {
        let r = Reduction { used: 2, total: 7 };
        assert_eq!(r.percent().floor(), q(71));
        assert_eq!(r.to_string_pct(), "2/7 (71% fewer, 71.4)");
        assert_eq!(Reduction { used: 3, total: 34 }.percent().floor(), q(91));
        assert_eq!(Reduction { used: 0, total: 0 }.percent(), zero());
    }
}
