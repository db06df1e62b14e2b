//! Command-line front end: validate scenarios, check network connectivity,
//! run the distributed closed loop or the centralized dispatch oracle.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fesms::analysis::{compute_metrics, Thresholds};
use fesms::graph::{ConnectivityReport, FailureCause, WindowReport};
use fesms::output::{write_metrics_json, write_plot_files, write_trace_csv, RunHeader};
use fesms::scenario::{parse_scenario, ScenarioError};
use fesms::sim::{run, run_dispatch_oracle, SimError};
use fesms::{FesmsScenario, Metrics, Trace};

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "fesms", version, about = "Distributed flywheel fleet simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the distributed closed loop and write trace, metrics and plot data.
    Run(RunArgs),
    /// Report the joint-connectivity windows of the scenario's network.
    CheckNetwork {
        scenario: PathBuf,
        /// Window length bound in seconds (overrides the scenario's epsilon_s).
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Run the centralized ideal-dispatch reference trajectory.
    DispatchOracle(RunArgs),
    /// Load and validate a scenario, printing derived quantities.
    Validate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    record_every: Option<usize>,
    /// Refuse to run unless the network is jointly connected.
    #[arg(long)]
    enforce_connectivity: bool,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Self::new(EXIT_INVALID, e)
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::NonFinite { ref partial, .. } => Self::new(
                EXIT_NUMERICAL,
                format!("numerical abort: {e} after {} recorded samples", partial.len()),
            ),
            SimError::NotJointlyConnected(ref report) => Self::new(
                EXIT_INVALID,
                format!("refusing to run: {e}\n{}", describe_report(report)),
            ),
            SimError::Invalid(e) => e.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Self::new(EXIT_FAILURE, format!("{e:#}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::CheckNetwork { scenario, epsilon } => cmd_check_network(&scenario, epsilon),
        Command::DispatchOracle(args) => cmd_dispatch_oracle(&args),
        Command::Validate(args) => cmd_validate(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn read_scenario(path: &Path) -> Result<FesmsScenario, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

/// Loads the scenario, applies command-line overrides and revalidates.
fn prepare(args: &RunArgs) -> Result<FesmsScenario, ScenarioError> {
    let mut sc = read_scenario(&args.scenario)?;
    if let Some(dt) = args.dt {
        sc.sim.dt = dt;
    }
    if let Some(t_end) = args.t_end {
        sc.sim.t_end = t_end;
    }
    if let Some(every) = args.record_every {
        sc.sim.record_every = every;
    }
    if let Some(eps) = args.epsilon {
        sc.connectivity.epsilon = Some(eps);
    }
    if args.enforce_connectivity {
        sc.connectivity.enforce = true;
        if sc.connectivity.epsilon.is_none() {
            return Err(ScenarioError::field(
                "network.epsilon_s",
                "required with --enforce-connectivity (set it in the scenario or pass --epsilon)",
            ));
        }
    }
    sc.validate()?;
    sc.check_step_guidance()?;
    Ok(sc)
}

fn out_dir(args: &RunArgs, sc: &FesmsScenario, suffix: &str) -> PathBuf {
    args.out_dir.clone().unwrap_or_else(|| {
        let base = sc.output.dir.clone().unwrap_or_else(|| format!("out/{}", sc.name));
        PathBuf::from(base + suffix)
    })
}

fn header(sc: &FesmsScenario) -> RunHeader {
    let (alpha0, beta0) = sc.coefficients();
    RunHeader {
        scenario: sc.name.clone(),
        dt: sc.sim.dt,
        t_end: sc.sim.t_end,
        record_every: sc.sim.record_every,
        integrator: sc.sim.integrator,
        alpha0,
        beta0,
    }
}

fn emit(sc: &FesmsScenario, trace: &Trace, dir: &Path) -> Result<Metrics, Failure> {
    use anyhow::Context;
    let metrics = compute_metrics(trace, &Thresholds::default()).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv = dir.join("trace.csv");
    write_trace_csv(trace, &csv).with_context(|| format!("writing {}", csv.display()))?;
    let json = dir.join("metrics.json");
    write_metrics_json(&header(sc), &metrics, &json).with_context(|| format!("writing {}", json.display()))?;
    if sc.output.plots {
        let plots = dir.join("plots");
        write_plot_files(trace, &metrics, &plots).with_context(|| format!("writing {}", plots.display()))?;
    }
    Ok(metrics)
}

fn settled(t: Option<f64>) -> String {
    t.map_or_else(|| "not settled".to_string(), |t| format!("settled after {t:.3} s"))
}

fn print_summary(m: &Metrics) {
    let verdict = |ok: bool| if ok { "pass" } else { "fail" };
    println!(
        "tracking error:   max {:.4e} W, threshold {:.4e} W, {} [{}]",
        m.tracking_error.max,
        m.tracking_error.threshold,
        settled(m.tracking_error.settled_after),
        verdict(m.objectives.tracking)
    );
    println!(
        "SOE spread:       max {:.4e}, threshold {:.1e}, {} [{}]",
        m.soe_spread.max,
        m.soe_spread.threshold,
        settled(m.soe_spread.settled_after),
        verdict(m.objectives.soe_balance)
    );
    println!(
        "SOE rate spread:  max {:.4e} 1/s, threshold {:.1e}, {} [{}]",
        m.soe_rate_spread.max,
        m.soe_rate_spread.threshold,
        settled(m.soe_rate_spread.settled_after),
        verdict(m.objectives.soe_rate_balance)
    );
    if m.violations.count > 0 {
        println!("SOE left [0, 1] at {} samples", m.violations.count);
    }
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let sc = prepare(args)?;
    let trace = run(&sc)?;
    let dir = out_dir(args, &sc, "");
    let metrics = emit(&sc, &trace, &dir)?;
    println!("{}: {} samples written to {}", sc.name, trace.len(), dir.display());
    print_summary(&metrics);
    Ok(())
}

fn cmd_dispatch_oracle(args: &RunArgs) -> Result<(), Failure> {
    let sc = prepare(args)?;
    let trace = run_dispatch_oracle(&sc)?;
    let dir = out_dir(args, &sc, "_oracle");
    let metrics = emit(&sc, &trace, &dir)?;
    println!(
        "{} (dispatch oracle): {} samples written to {}",
        sc.name,
        trace.len(),
        dir.display()
    );
    print_summary(&metrics);
    Ok(())
}

fn cmd_validate(args: &RunArgs) -> Result<(), Failure> {
    let sc = prepare(args)?;
    let (alpha0, beta0) = sc.coefficients();
    println!("{}: valid", sc.name);
    println!(
        "  agents: {}, generator dimension: {}",
        sc.n_agents(),
        sc.generator.dim()
    );
    for (i, p) in sc.fleet.iter().enumerate() {
        println!(
            "  flywheel {}: gamma = {:.6e}, E_max = {:.6e} J",
            i + 1,
            p.gamma(),
            p.energy_capacity()
        );
    }
    println!("  alpha0 = {alpha0:.6e}, beta0 = {beta0:.6e}");
    println!(
        "  dt = {}, t_end = {}, steps = {}, graphs: {}",
        sc.sim.dt,
        sc.sim.t_end,
        sc.sim.n_steps()?,
        sc.graph_names.join(", ")
    );
    Ok(())
}

fn cmd_check_network(path: &Path, epsilon: Option<f64>) -> Result<(), Failure> {
    let mut sc = read_scenario(path)?;
    if epsilon.is_some() {
        sc.connectivity.epsilon = epsilon;
        sc.validate()?;
    }
    let report = sc.connectivity_report()?;
    println!("{}", describe_report(&report));
    if report.holds() {
        Ok(())
    } else {
        Err(Failure::new(EXIT_INVALID, "network is not jointly connected"))
    }
}

fn nodes(set: &std::collections::BTreeSet<usize>) -> String {
    set.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(", ")
}

fn describe_window(w: &WindowReport) -> String {
    let graphs = w.graphs.iter().map(|g| format!("#{g}")).collect::<Vec<_>>().join(" ");
    format!(
        "[{:.6}, {:.6}) graphs {graphs}: reachable {{{}}}",
        w.start,
        w.start + w.duration,
        nodes(&w.reachable)
    )
}

fn describe_report(r: &ConnectivityReport) -> String {
    let mut out = vec![format!("epsilon = {} s", r.epsilon)];
    for w in &r.windows {
        out.push(format!("  ok   {}", describe_window(w)));
    }
    match &r.failure {
        None => out.push(format!("verdict: jointly connected ({} windows)", r.windows.len())),
        Some((w, cause)) => {
            out.push(format!("  FAIL {}", describe_window(w)));
            let why = match cause {
                FailureCause::WindowTooLong => "no window shorter than epsilon connects them",
                FailureCause::ScheduleEnded => "the schedule ends before they are reached",
            };
            out.push(format!(
                "verdict: not jointly connected; unreachable nodes {{{}}}: {why}",
                nodes(&w.unreachable)
            ));
        }
    }
    out.join("\n")
}
