use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(format!("{name}.json"))
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsncbs"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("TSNCBS_LOG", "off")
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn analyze_reports_unschedulable_flows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example("illustrative");
    let out = run(&["analyze", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let csv = read(dir.path(), "verdicts.csv");
    assert!(csv.starts_with("flow,priority,delay_us,deadline_us,schedulable,class\n"));
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.contains("f4,1,485.935,472.000,false,UNSCHED_NONSHAPED"));
}

#[test]
fn packetized_lines_only_grow_the_bounds() {
    let cfg = example("illustrative");
    let fluid = tempfile::tempdir().unwrap();
    let packet = tempfile::tempdir().unwrap();
    run(&["analyze", cfg.to_str().unwrap()], fluid.path());
    run(&["analyze", cfg.to_str().unwrap(), "--packetized-lines"], packet.path());
    let delays = |dir: &Path| -> Vec<f64> {
        read(dir, "verdicts.csv").lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect()
    };
    for (a, b) in delays(fluid.path()).iter().zip(delays(packet.path())) {
        assert!(b >= *a);
    }
}

#[test]
fn deploy_automotive_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example("automotive");
    let out = run(&["deploy", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let placement = read(dir.path(), "placement.csv");
    assert_eq!(placement.lines().count(), 4);
    assert!(placement.contains("HPC->ZCP3"));
    assert!(dir.path().join("automotive.deployed.json").exists());
    assert!(read(dir.path(), "rounds.csv").lines().count() > 1);

    // the enriched document is schedulable as is
    let again = tempfile::tempdir().unwrap();
    let deployed = dir.path().join("automotive.deployed.json");
    let out = run(&["analyze", deployed.to_str().unwrap()], again.path());
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn deploy_illustrative_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example("illustrative");
    let out = run(&["deploy", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("f4"));
    assert!(dir.path().join("placement.csv").exists());
}

#[test]
fn outputs_are_byte_stable() {
    let cfg = example("automotive");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(&["deploy", cfg.to_str().unwrap()], a.path());
    run(&["deploy", cfg.to_str().unwrap()], b.path());
    for name in ["placement.csv", "verdicts.csv", "rounds.csv", "automotive.deployed.json"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
}

#[test]
fn compare_writes_cdfs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example("automotive");
    let out = run(&["compare", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for scenario in ["npsp", "partial", "full"] {
        let cdf = read(dir.path(), &format!("cdf_p0_{scenario}.csv"));
        assert!(cdf.starts_with("delay_us,cumulative_fraction\n"));
        assert!(cdf.trim_end().ends_with(",1.000000"));
    }
    assert!(read(dir.path(), "compare.csv").starts_with("flow,priority,deadline_us,npsp_us,partial_us,full_us\n"));
}

#[test]
fn simulate_checks_the_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example("illustrative");
    let out = run(&["simulate", cfg.to_str().unwrap(), "--horizon", "2000", "--seed", "5", "--trace"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read(dir.path(), "sim_summary.csv");
    assert!(summary.starts_with("flow,observed_max_us,nc_bound_us,margin_pct\n"));
    assert_eq!(summary.lines().count(), 7);
    assert!(read(dir.path(), "trace.csv").starts_with("time_us,port,priority,event,credit_bits,frame_id\n"));
}

#[test]
fn empty_horizon_writes_a_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example("illustrative");
    let out = run(&["simulate", cfg.to_str().unwrap(), "--horizon", "0"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(read(dir.path(), "sim_summary.csv"), "flow,observed_max_us,nc_bound_us,margin_pct\n");
}

#[test]
fn malformed_document_names_the_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let text = fs::read_to_string(example("illustrative")).unwrap().replace(r#""burst_bits": 960, "deadline_us": 472"#, r#""burst_bits": 960, "deadline_us": -1"#);
    fs::write(&bad, text).unwrap();
    let out = run(&["analyze", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("flows[4]"), "{err}");

    fs::write(&bad, "{ not json").unwrap();
    let out = run(&["analyze", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["analyze", "/nonexistent/config.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
