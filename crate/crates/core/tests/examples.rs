mod common;

use tsncbs::deploy::{self, full_cbs_baseline, run_framework, DeployOptions, NoSolution, Outcome};
use tsncbs::nc::fp_tfa;
use tsncbs::rational::{q, ratio, us_to_seconds};
use tsncbs::simcheck::{self, blocking_demo, simulate, SimScenario};
use tsncbs::verify::verify_schedulability;
use tsncbs::{load_configuration, FlowId};

fn deadline(config: &tsncbs::NetworkConfiguration, id: &str) -> tsncbs::Q {
    config.flow(&id.into()).unwrap().deadline.clone().unwrap()
}

#[test]
fn illustrative_npsp_misses_the_priority_one_deadlines() {
    let c = common::example("illustrative");
    let sched = verify_schedulability(&c);
    let late: Vec<&str> = sched.unsched_non_shaped.iter().map(|f| f.as_str()).collect();
    assert_eq!(late, ["f2", "f3", "f4"]);
    assert!(sched.schedulable.contains(&FlowId::from("f0")));
    for id in ["f2", "f3", "f4"] {
        let d = sched.analysis.flow_delay(&id.into()).finite().unwrap().clone();
        assert!(d > deadline(&c, id));
    }
}

#[test]
fn illustrative_first_round_shapes_sw0() {
    let c = common::example("illustrative");
    let run = run_framework(&c, &DeployOptions::default()).unwrap();
    let first: Vec<String> = run.state.placed.iter().take(2).map(|a| format!("{}/p{}", a.port, a.priority)).collect();
    assert_eq!(first, ["SW0_2/p0", "SW0_1/p0"]);
    assert_eq!(run.state.placed[0].idle_slope, q(34_416_827));
    // f4 stays 16 ns above its 472 us deadline
    assert!(matches!(run.outcome, Outcome::Infeasible(NoSolution::NoEligibleDevice { ref foi }) if foi.as_str() == "f4"));
    let f4 = run.schedulability.analysis.flow_delay(&"f4".into()).finite().unwrap().clone();
    assert!(f4 > us_to_seconds(&q(472)) && f4 < us_to_seconds(&ratio(47_202, 100)));
}

#[test]
fn automotive_deploys_on_two_devices() {
    let c = common::example("automotive");
    let run = run_framework(&c, &DeployOptions::default()).unwrap();
    assert!(matches!(run.outcome, Outcome::Success));
    let tsn: Vec<String> = run.config.tsn_devices().iter().map(|d| d.to_string()).collect();
    assert_eq!(tsn, ["HPC", "ZCP3"]);
    assert_eq!(run.config.cbs_count(), 3);
    assert!(run.config.validate().is_empty());
    let (devices, instances) = deploy::reductions(&c, &run.config);
    assert_eq!((devices.used, devices.total), (2, 7));
    assert_eq!(instances.used, 3);

    // the enriched document analyses as deployed
    let text = serde_json::to_string(&run.config.to_document()).unwrap();
    let again = load_configuration(&text).unwrap();
    assert_eq!(again.cbs(), run.config.cbs());
    assert!(verify_schedulability(&again).all_schedulable());
}

#[test]
fn deployment_is_deterministic() {
    let c = common::example("automotive");
    let a = run_framework(&c, &DeployOptions::default()).unwrap();
    let b = run_framework(&c, &DeployOptions::default()).unwrap();
    assert_eq!(a.config.cbs(), b.config.cbs());
    assert_eq!(deploy::trace_csv(&a.trace), deploy::trace_csv(&b.trace));
}

#[test]
fn full_baseline_shapes_more_than_partial() {
    let c = common::example("automotive");
    let partial = run_framework(&c, &DeployOptions::default()).unwrap();
    let full = full_cbs_baseline(&c, &DeployOptions::default()).unwrap();
    assert!(full.config.cbs_count() > partial.config.cbs_count());
    assert!(full.config.tsn_devices().len() >= partial.config.tsn_devices().len());
    assert!(full.config.validate().is_empty());
}

#[test]
fn deployed_automotive_stays_under_its_bounds() {
    let c = common::example("automotive");
    let run = run_framework(&c, &DeployOptions::default()).unwrap();
    let analysis = fp_tfa(&run.config);
    let sim = simulate(&SimScenario::new(run.config.clone(), ratio(1, 1000), 7));
    let rows = simcheck::summarize(&run.config, &sim, &analysis);
    assert!(rows.iter().all(|r| !r.violates()));
    assert!(simcheck::credit_violations(&run.config, &sim).is_empty());
}

#[test]
fn shaping_delays_a_shaped_flow() {
    let c = common::example("illustrative");
    let shaped = c.with_cbs(tsncbs::CbsAssignment { port: "SW0_2".into(), priority: 0, idle_slope: q(15_000_000) });
    let rows = blocking_demo(&shaped, ratio(2, 1000), 3);
    let f0 = rows.iter().find(|r| r.flow.as_str() == "f0").unwrap();
    assert!(f0.with_cbs.as_ref().unwrap() > f0.without_cbs.as_ref().unwrap());
    assert!(simcheck::blocking_csv(&rows).starts_with("flow,with_cbs_us,without_cbs_us,inflation_pct\n"));
}
