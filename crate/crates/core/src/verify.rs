//! Schedulability verdicts.
//!
//! Every flow with a deadline lands in exactly one of three classes:
//! schedulable, unschedulable and shaped (its priority has a CBS somewhere
//! on its path), or unschedulable and not shaped. A bound equal to the
//! deadline counts as schedulable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::curves::Deviation;
use crate::model::{FlowId, NetworkConfiguration};
use crate::nc::{self, AnalysisResult};
use crate::rational::{format_fixed, seconds_to_us, Q};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Verdict {
    Sched,
    UnschedShaped,
    UnschedNonShaped,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Sched => "SCHED",
            Verdict::UnschedShaped => "UNSCHED_SHAPED",
            Verdict::UnschedNonShaped => "UNSCHED_NONSHAPED",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// `d − D` in seconds. `Infinite` (unbounded delay) sorts above every finite slack.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Slack {
    Finite(Q),
    Infinite,
}

impl Slack {
    pub fn is_met(&self) -> bool {
        matches!(self, Slack::Finite(s) if s <= &Q::from_integer(0.into()))
    }

    pub fn to_us_string(&self) -> String {
        match self {
            Slack::Finite(s) => format_fixed(&seconds_to_us(s), 3),
            Slack::Infinite => "inf".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Schedulability {
    pub schedulable: BTreeSet<FlowId>,
    pub unsched_shaped: BTreeSet<FlowId>,
    pub unsched_non_shaped: BTreeSet<FlowId>,
    pub slack: BTreeMap<FlowId, Slack>,
    pub analysis: AnalysisResult,
}

impl Schedulability {
    pub fn all_schedulable(&self) -> bool {
        self.unsched_shaped.is_empty() && self.unsched_non_shaped.is_empty()
    }

    pub fn verdict(&self, id: &FlowId) -> Option<Verdict> {
        if self.schedulable.contains(id) {
            Some(Verdict::Sched)
        } else if self.unsched_shaped.contains(id) {
            Some(Verdict::UnschedShaped)
        } else if self.unsched_non_shaped.contains(id) {
            Some(Verdict::UnschedNonShaped)
        } else {
            None
        }
    }

    pub fn is_schedulable(&self, id: &FlowId) -> bool {
        self.schedulable.contains(id)
    }

    pub fn unschedulable(&self) -> BTreeSet<FlowId> {
        self.unsched_shaped.union(&self.unsched_non_shaped).cloned().collect()
    }

    /// Verdict CSV: the flow-delay columns plus `class`.
    pub fn to_csv(&self, config: &NetworkConfiguration) -> String {
        let mut out = format!("{},class\n", nc::FLOW_CSV_HEADER);
        for f in config.flows() {
            let row = nc::flow_csv_row(f, self.analysis.flow_delay(&f.id));
            let class = self.verdict(&f.id).map(Verdict::label).unwrap_or("");
            out.push_str(&format!("{row},{class}\n"));
        }
        out
    }
}

pub fn verify_schedulability(config: &NetworkConfiguration) -> Schedulability {
    classify(config, nc::fp_tfa(config))
}

/// Partition the deadline-bearing flows of `config` using `analysis`.
pub fn classify(config: &NetworkConfiguration, analysis: AnalysisResult) -> Schedulability {
    let mut s = Schedulability {
        schedulable: BTreeSet::new(),
        unsched_shaped: BTreeSet::new(),
        unsched_non_shaped: BTreeSet::new(),
        slack: BTreeMap::new(),
        analysis,
    };
    for f in config.flows() {
        let Some(deadline) = &f.deadline else { continue };
        let slack = match s.analysis.flow_delay(&f.id) {
            Deviation::Finite(d) => Slack::Finite(d - deadline),
            Deviation::Unbounded => Slack::Infinite,
        };
        if slack.is_met() {
            s.schedulable.insert(f.id.clone());
        } else if config.is_shaped(f) {
            s.unsched_shaped.insert(f.id.clone());
        } else {
            s.unsched_non_shaped.insert(f.id.clone());
        }
        s.slack.insert(f.id.clone(), slack);
    }
    s
}

/// Highest-priority flows that miss their deadline in a configuration
/// without any CBS. The deployment framework assumes there are none.
pub fn precondition_violations(config: &NetworkConfiguration, sched: &Schedulability) -> Vec<FlowId> {
    if config.cbs_count() > 0 {
        return Vec::new();
    }
    config
        .flows()
        .iter()
        .filter(|f| f.priority == 0 && sched.verdict(&f.id).is_some_and(|v| v != Verdict::Sched))
        .map(|f| f.id.clone())
        .collect()
}

/// Step CDF of the delay bounds of the flows of `priority`: one point per
/// flow, sorted by bound, unbounded flows last.
pub fn delay_cdf(config: &NetworkConfiguration, analysis: &AnalysisResult, priority: u8) -> Vec<(Deviation, Q)> {
    let mut delays: Vec<Deviation> =
        config.flows_of_priority(priority).iter().map(|f| analysis.flow_delay(&f.id).clone()).collect();
    delays.sort_by(|a, b| match (a, b) {
        (Deviation::Finite(x), Deviation::Finite(y)) => x.cmp(y),
        (Deviation::Finite(_), Deviation::Unbounded) => std::cmp::Ordering::Less,
        (Deviation::Unbounded, Deviation::Finite(_)) => std::cmp::Ordering::Greater,
        _ => std::cmp::Ordering::Equal,
    });
    let n = delays.len() as i64;
    delays
        .into_iter()
        .enumerate()
        .map(|(i, d)| (d, Q::new((i as i64 + 1).into(), n.into())))
        .collect()
}

pub fn cdf_csv(points: &[(Deviation, Q)]) -> String {
    let mut out = String::from("delay_us,cumulative_fraction\n");
    for (d, frac) in points {
        out.push_str(&format!("{},{}\n", nc::format_us(d), format_fixed(frac, 6)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{load_configuration, CbsAssignment};
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
            {"id": "m", "priority": 1, "rate_bps": 1e6, "burst_bits": 1000, "deadline_us": 300, "path": ["B0", "S0"]},
            {"id": "be", "priority": 2, "rate_bps": 1e6, "burst_bits": 12336, "path": ["B0", "S0"]}
        ]
    }"#;

    #[test]
    fn partition_and_slack_sign() {
        let c = load_configuration(NET).unwrap();
        let s = verify_schedulability(&c);
        assert!(s.schedulable.contains(&"h".into()));
        assert!(s.unsched_non_shaped.contains(&"m".into()));
        assert_eq!(s.verdict(&"be".into()), None);
        for (id, slack) in &s.slack {
            assert_eq!(slack.is_met(), s.is_schedulable(id));
        }
        assert!(precondition_violations(&c, &s).is_empty());
        let csv = s.to_csv(&c);
        assert!(csv.lines().next().unwrap().ends_with(",class"));
        assert!(csv.contains("m,1,") && csv.contains("UNSCHED_NONSHAPED"));
    }

    #[test]
    fn cdf_is_a_step_function() {
        let c = load_configuration(NET).unwrap();
        let s = verify_schedulability(&c);
        let pts = delay_cdf(&c, &s.analysis, 0);
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].1, Q::from_integer(1.into()));
        assert!(delay_cdf(&c, &s.analysis, 5).is_empty());
        assert_eq!(cdf_csv(&[]), "delay_us,cumulative_fraction\n");
    }

    #[test]
    fn shaped_classification() {
        let c = load_configuration(&NET.replace(r#""deadline_us": 2000"#, r#""deadline_us": 100"#)).unwrap();
        let shaped = c.with_cbs(CbsAssignment { port: "S0".into(), priority: 0, idle_slope: q(25_000_000) });
        let s = verify_schedulability(&shaped);
        assert!(s.unsched_shaped.contains(&"h".into()));
        let plain = verify_schedulability(&c);
        assert_eq!(precondition_violations(&c, &plain), vec![FlowId::from("h")]);
    }
}
