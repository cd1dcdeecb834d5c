//! `tsncbs`: delay bounds, partial CBS deployment, baseline comparison and
//! simulation for TSN/Ethernet configurations.
//!
//! Exit codes: 0 success, 1 bad input or I/O, 2 unschedulable (analyze) or
//! priority-0 precondition violated (deploy), 3 infeasible, 4 round budget
//! exceeded, 5 simulation exceeded an analytical bound.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use tsncbs::deploy::{self, DeployOptions, Outcome};
use tsncbs::nc::{fp_tfa_with, AnalysisOptions};
use tsncbs::rational::{format_fixed, parse_decimal, to_f64, us_to_seconds, Q};
use tsncbs::simcheck::{self, ArrivalModel, SimScenario};
use tsncbs::verify;
use tsncbs::{load_configuration, NetworkConfiguration};

#[derive(Parser)]
#[command(name = "tsncbs", version, about = "Network Calculus bounds and partial CBS deployment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute delay bounds and verdicts.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        lines: LineArgs,
    },
    /// Place CBS on as few devices as possible until every flow is schedulable.
    Deploy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        deploy: DeployArgs,
    },
    /// Compare NP-SP only, partial CBS and full CBS; writes CDF data.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        deploy: DeployArgs,
    },
    /// Simulate the configuration and check observed delays against the bounds.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimArgs,
    },
}

#[derive(Args)]
struct Common {
    /// Configuration document (JSON).
    config: PathBuf,
    /// Directory for output files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct LineArgs {
    /// Add one maximum frame to every line cap (store-and-forward packetization).
    #[arg(long)]
    packetized_lines: bool,
}

impl LineArgs {
    fn options(&self) -> AnalysisOptions {
        AnalysisOptions { packetized_lines: self.packetized_lines, ..AnalysisOptions::default() }
    }
}

#[derive(Args)]
struct DeployArgs {
    /// Initial margin m0 in (0, 1].
    #[arg(long, default_value = "1", value_parser = decimal)]
    margin: Q,
    /// Margin decrement per reconfiguration.
    #[arg(long, default_value = "0.05", value_parser = decimal)]
    rho: Q,
    #[arg(long, default_value_t = 50)]
    max_rounds: usize,
}

impl DeployArgs {
    fn options(&self) -> DeployOptions {
        DeployOptions { margin: self.margin.clone(), rho: self.rho.clone(), max_rounds: self.max_rounds }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Arrivals {
    Greedy,
    Periodic,
}

#[derive(Args)]
struct SimArgs {
    /// Release frames during this many microseconds.
    #[arg(long, default_value = "10000", value_parser = decimal)]
    horizon: Q,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "greedy")]
    arrivals: Arrivals,
    /// Random start offset bound for greedy arrivals, microseconds.
    #[arg(long, default_value = "0", value_parser = decimal)]
    max_offset: Q,
    /// Deploy CBS first and simulate the result.
    #[arg(long)]
    deployed: bool,
    /// Also write the per-event trace.
    #[arg(long)]
    trace: bool,
    #[command(flatten)]
    lines: LineArgs,
    #[command(flatten)]
    deploy: DeployArgs,
}

fn decimal(s: &str) -> Result<Q, String> {
    parse_decimal(s).ok_or_else(|| format!("not a decimal number: {s}"))
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TSNCBS_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze { common, lines } => analyze(common, lines),
        Command::Deploy { common, deploy } => cmd_deploy(common, deploy),
        Command::Compare { common, deploy } => compare(common, deploy),
        Command::Simulate { common, sim } => simulate(common, sim),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load(path: &Path) -> Result<NetworkConfiguration> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    load_configuration(&text).with_context(|| format!("in {}", path.display()))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn ms(t: Instant) -> String {
    format!("{:.1} ms", t.elapsed().as_secs_f64() * 1e3)
}

fn analyze(c: &Common, lines: &LineArgs) -> Result<u8, Failure> {
    let config = load(&c.config)?;
    let t = Instant::now();
    let sched = verify::classify(&config, fp_tfa_with(&config, &lines.options()));
    let elapsed = ms(t);
    write(&c.out, "verdicts.csv", &sched.to_csv(&config))?;
    if !sched.analysis.converged {
        println!("fixed point did not converge; every bound is unbounded");
    }
    let with_deadline = sched.slack.len();
    println!(
        "{}: {} flows, {} with deadlines, {} schedulable, {} unschedulable (shaped {}, non-shaped {}) [{elapsed}]",
        name_of(&config, &c.config),
        config.flows().len(),
        with_deadline,
        sched.schedulable.len(),
        sched.unschedulable().len(),
        sched.unsched_shaped.len(),
        sched.unsched_non_shaped.len(),
    );
    for id in sched.unschedulable() {
        println!("  {id}: {} (deadline exceeded by {} us)", sched.verdict(&id).expect("classified"), sched.slack[&id].to_us_string());
    }
    Ok(if sched.all_schedulable() { 0 } else { 2 })
}

fn name_of(config: &NetworkConfiguration, path: &Path) -> String {
    if config.name().is_empty() {
        path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    } else {
        config.name().to_string()
    }
}

fn outcome_code(outcome: &Outcome) -> u8 {
    match outcome {
        Outcome::Success => 0,
        Outcome::PreconditionViolated(_) => 2,
        Outcome::Infeasible(_) => 3,
        Outcome::BudgetExceeded => 4,
    }
}

fn describe(outcome: &Outcome) -> String {
    match outcome {
        Outcome::Success => "SUCCESS".into(),
        Outcome::Infeasible(why) => format!("INFEASIBLE ({why:?})"),
        Outcome::BudgetExceeded => "BUDGET_EXCEEDED".into(),
        Outcome::PreconditionViolated(ids) => format!(
            "PRECONDITION_VIOLATED: priority-0 flows miss their deadline without CBS: {}",
            ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
        ),
    }
}

fn cmd_deploy(c: &Common, d: &DeployArgs) -> Result<u8, Failure> {
    let config = load(&c.config)?;
    let name = name_of(&config, &c.config);
    let t = Instant::now();
    let out = deploy::run_framework(&config, &d.options()).map_err(anyhow::Error::from)?;
    let framework_time = ms(t);
    let t = Instant::now();
    let base = deploy::full_cbs_baseline(&config, &d.options()).map_err(anyhow::Error::from)?;
    let baseline_time = ms(t);

    write(&c.out, "rounds.csv", &deploy::trace_csv(&out.trace))?;
    write(&c.out, "verdicts.csv", &out.schedulability.to_csv(&out.config))?;
    write(&c.out, "placement.csv", &deploy::placement_csv(&out.config))?;
    println!("{name}: {} after {} round(s) [{framework_time}]", describe(&out.outcome), out.trace.len());
    if matches!(out.outcome, Outcome::Success) {
        let doc = serde_json::to_string_pretty(&out.config.to_document()).map_err(anyhow::Error::from)?;
        write(&c.out, &format!("{name}.deployed.json"), &(doc + "\n"))?;
        for a in out.config.cbs_assignments() {
            println!("  {} {} p{} idleslope {} bps", out.config.device_of(&a.port), a.port, a.priority, format_fixed(&a.idle_slope, 0));
        }
        let (devices, instances) = deploy::reductions(&config, &out.config);
        println!("  TSN devices: {}", devices.to_string_pct());
        println!("  CBS instances: {}", instances.to_string_pct());
        println!(
            "  full CBS baseline: {} CBS on {} devices, margin {} [{baseline_time}]{}",
            base.config.cbs_count(),
            base.config.tsn_devices().len(),
            format_fixed(&base.margin, 4),
            base.failure.as_ref().map(|f| format!(", incomplete: {f}")).unwrap_or_default()
        );
    }
    Ok(outcome_code(&out.outcome))
}

fn compare(c: &Common, d: &DeployArgs) -> Result<u8, Failure> {
    let config = load(&c.config)?;
    let npsp_config = config.without_cbs();
    let npsp = verify::verify_schedulability(&npsp_config);
    let out = deploy::run_framework(&config, &d.options()).map_err(anyhow::Error::from)?;
    if !matches!(out.outcome, Outcome::Success) {
        return Err(Failure {
            code: outcome_code(&out.outcome),
            error: anyhow::anyhow!("partial deployment failed: {}", describe(&out.outcome)),
        });
    }
    let base = deploy::full_cbs_baseline(&config, &d.options()).map_err(anyhow::Error::from)?;
    let scenarios = [
        ("npsp", &npsp_config, &npsp),
        ("partial", &out.config, &out.schedulability),
        ("full", &base.config, &base.schedulability),
    ];
    let priorities: std::collections::BTreeSet<u8> =
        config.flows().iter().filter(|f| f.deadline.is_some()).map(|f| f.priority).collect();
    for p in &priorities {
        for (label, cfg, sched) in &scenarios {
            let pts = verify::delay_cdf(cfg, &sched.analysis, *p);
            write(&c.out, &format!("cdf_p{p}_{label}.csv"), &verify::cdf_csv(&pts))?;
        }
    }
    let mut table = String::from("flow,priority,deadline_us,npsp_us,partial_us,full_us\n");
    for f in config.flows() {
        let deadline = f.deadline.as_ref().map(|v| format_fixed(&tsncbs::rational::seconds_to_us(v), 3)).unwrap_or_default();
        table.push_str(&format!(
            "{},{},{},{},{},{}\n",
            f.id,
            f.priority,
            deadline,
            tsncbs::nc::format_us(npsp.analysis.flow_delay(&f.id)),
            tsncbs::nc::format_us(out.schedulability.analysis.flow_delay(&f.id)),
            tsncbs::nc::format_us(base.schedulability.analysis.flow_delay(&f.id)),
        ));
    }
    write(&c.out, "compare.csv", &table)?;

    let name = name_of(&config, &c.config);
    println!("{name}: partial {} CBS, full {} CBS", out.config.cbs_count(), base.config.cbs_count());
    let gains: Vec<f64> = config
        .flows_of_priority(0)
        .iter()
        .filter_map(|f| {
            let partial = tsncbs::nc::deviation_us_f64(out.schedulability.analysis.flow_delay(&f.id));
            let full = tsncbs::nc::deviation_us_f64(base.schedulability.analysis.flow_delay(&f.id));
            (full.is_finite() && full > 0.0).then(|| 1.0 - partial / full)
        })
        .collect();
    if !gains.is_empty() {
        let min = gains.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = gains.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!("  p0 bound reduction partial vs full: min {:.1}%, max {:.1}%", min * 100.0, max * 100.0);
    }
    for p in priorities.iter().filter(|&&p| p > 0) {
        let flows: Vec<_> = config.flows_of_priority(*p).into_iter().filter(|f| f.deadline.is_some()).collect();
        let count = |s: &verify::Schedulability| flows.iter().filter(|f| s.is_schedulable(&f.id)).count();
        println!(
            "  p{p} schedulable: npsp {}/{}, partial {}/{}",
            count(&npsp),
            flows.len(),
            count(&out.schedulability),
            flows.len()
        );
    }
    Ok(0)
}

fn simulate(c: &Common, s: &SimArgs) -> Result<u8, Failure> {
    let mut config = load(&c.config)?;
    if s.deployed {
        let out = deploy::run_framework(&config, &s.deploy.options()).map_err(anyhow::Error::from)?;
        if !matches!(out.outcome, Outcome::Success) {
            return Err(Failure {
                code: outcome_code(&out.outcome),
                error: anyhow::anyhow!("deployment failed: {}", describe(&out.outcome)),
            });
        }
        config = out.config;
    }
    if s.horizon <= Q::from_integer(0.into()) {
        write(&c.out, "sim_summary.csv", &simcheck::summary_csv(&[]))?;
        println!("empty horizon: nothing simulated");
        return Ok(0);
    }
    let analysis = fp_tfa_with(&config, &s.lines.options());
    let mut scenario = SimScenario::new(config.clone(), us_to_seconds(&s.horizon), s.seed);
    scenario.model = match s.arrivals {
        Arrivals::Greedy => ArrivalModel::GreedyBurst { max_offset: us_to_seconds(&s.max_offset) },
        Arrivals::Periodic => ArrivalModel::PeriodicJitter,
    };
    scenario.record_trace = s.trace;
    let t = Instant::now();
    let sim = simcheck::simulate(&scenario);
    let elapsed = ms(t);
    let rows = simcheck::summarize(&config, &sim, &analysis);
    write(&c.out, "sim_summary.csv", &simcheck::summary_csv(&rows))?;
    if s.trace {
        write(&c.out, "trace.csv", &simcheck::trace_csv(&sim.trace))?;
    }
    let violations: Vec<_> = rows.iter().filter(|r| r.violates()).collect();
    let credit = simcheck::credit_violations(&config, &sim);
    println!(
        "{}: {} frames simulated to {:.3} us, {} bound violations, {} credit-range violations [{elapsed}]",
        name_of(&config, &c.config),
        sim.frames,
        to_f64(&sim.end_time) * 1e6,
        violations.len(),
        credit.len()
    );
    for r in &violations {
        println!("  {} observed above bound {}", r.flow, tsncbs::nc::format_us(&r.bound));
    }
    for v in &credit {
        println!("  credit of {}/p{} left [{}, {}]", v.port, v.priority, format_fixed(&v.cred_min, 1), format_fixed(&v.cred_max, 1));
    }
    Ok(if violations.is_empty() && credit.is_empty() { 0 } else { 5 })
}
