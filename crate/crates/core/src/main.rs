//! Command-line front end: analyze, optimize, sweep, simulate, and train on
//! closed-network system descriptions, with reproducible file outputs.
//!
//! Every command reads a JSON system config, takes a `--model` switch
//! selecting the network variant, and optionally writes its artifacts
//! (`report.json`, `trace.csv`, `manifest.json`) into a `--out` directory.
//! All artifacts of one run carry the same correlation id so they can be
//! matched to their manifest; the id hashes the deterministic inputs only,
//! so reruns with the same arguments, seeds, and `SOURCE_DATE_EPOCH`
//! produce byte-identical files.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 when inputs are invalid
//! or a validation suite fails.

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use fedqueue::{analysis, buzen, complexity, learn, optimize, simulate};
use fedqueue::{ClientProfile, CsParams, LearningConstants, ModelKind, RoutingVector, SystemConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Parser)]
#[command(
    name = "fedqueue",
    version,
    about = "Steady-state analysis, routing optimization, simulation, and \
             training for asynchronous federated learning on a closed \
             queueing network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form delays, throughput, gradients, and complexity bounds for
    /// one operating point.
    Analyze(AnalyzeArgs),
    /// Optimize the routing vector (and concurrency) for an objective.
    Optimize(OptimizeArgs),
    /// Trace the time/energy trade-off front over a mixing-weight sweep.
    Pareto(ParetoArgs),
    /// Run the discrete-event simulator and report empirical statistics.
    Simulate(SimulateArgs),
    /// Train on a synthetic federated least-squares task driven by the
    /// simulated network schedule.
    Learn(LearnArgs),
    /// Run the built-in oracle suites that cross-check the closed forms
    /// against enumeration, finite differences, and simulation.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    /// Base variant: updates apply the instant an upload finishes.
    Nocs,
    /// Extended variant with a single-server central-processing stage.
    Cs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    /// Minimize rounds to the target accuracy.
    Rounds,
    /// Maximize steady-state update throughput.
    Throughput,
    /// Minimize wall-clock time to the target accuracy.
    Time,
    /// Minimize energy to the target accuracy.
    Energy,
    /// Minimize a normalized blend of time and energy; needs --rho.
    Joint,
}

#[derive(clap::Args)]
struct AnalyzeArgs {
    /// Path to the system config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Network variant to evaluate.
    #[arg(long, value_enum, default_value_t = ModelArg::Nocs)]
    model: ModelArg,
    /// Target accuracy for the complexity bounds.
    #[arg(long)]
    eps: f64,
    /// Directory for report.json and manifest.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct OptimizeArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::Nocs)]
    model: ModelArg,
    #[arg(long)]
    eps: f64,
    /// What to optimize.
    #[arg(long, value_enum)]
    objective: ObjectiveArg,
    /// Energy weight of the joint objective, in [0, 1].
    #[arg(long)]
    rho: Option<f64>,
    /// Largest concurrency level the search considers.
    #[arg(long, default_value_t = 30, conflicts_with = "fixed_m")]
    m_max: usize,
    /// Optimize routing at this concurrency only, skipping the search.
    #[arg(long)]
    fixed_m: Option<usize>,
    /// Master seed for the optimizer's random restarts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for report.json, trace.csv, and manifest.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ParetoArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::Nocs)]
    model: ModelArg,
    #[arg(long)]
    eps: f64,
    /// Mixing weights to sweep, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1"
    )]
    rho: Vec<f64>,
    #[arg(long, default_value_t = 30)]
    m_max: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for pareto.csv, report.json, and manifest.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
#[command(group(ArgGroup::new("horizon").required(true).args(["rounds", "time_limit"])))]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::Nocs)]
    model: ModelArg,
    /// Service-time law for every station.
    #[arg(long, value_enum, default_value_t = simulate::ServiceLaw::Exponential)]
    law: simulate::ServiceLaw,
    /// Stop after this many applied updates (warmup included).
    #[arg(long)]
    rounds: Option<u64>,
    /// Stop at this simulated time instead.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Updates discarded before measuring; defaults to max(10 m, 1000).
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the full event log to trace.csv.
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct LearnArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::Nocs)]
    model: ModelArg,
    #[arg(long, value_enum, default_value_t = simulate::ServiceLaw::Exponential)]
    law: simulate::ServiceLaw,
    /// Target accuracy used to derive the learning-rate ceiling.
    #[arg(long)]
    eps: f64,
    /// Dimension of the synthetic regression task.
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Spread of the per-client local optima.
    #[arg(long, default_value_t = 1.0)]
    heterogeneity: f64,
    /// Standard deviation of the injected gradient noise.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Applied updates per training run.
    #[arg(long, default_value_t = 2000)]
    rounds: u64,
    /// Fixed learning rate; defaults to a grid under the theoretical ceiling.
    #[arg(long)]
    eta: Option<f64>,
    /// Sample points for the constant estimation.
    #[arg(long, default_value_t = 256)]
    samples: usize,
    /// Sphere radius around the optimum for the constant estimation.
    #[arg(long, default_value_t = 2.0)]
    radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for report.json, trace.csv, and manifest.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ValidateArgs {
    /// Directory for manifest.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Optimize(args) => cmd_optimize(args),
        Command::Pareto(args) => cmd_pareto(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Learn(args) => cmd_learn(args),
        Command::Validate(args) => cmd_validate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

/// On-disk config: the system description plus the optional constants block
/// the complexity bounds need.
#[derive(Deserialize)]
struct FileConfig {
    #[serde(flatten)]
    system: SystemConfig,
    constants: Option<LearningConstants>,
}

fn load_config(path: &Path) -> Result<(SystemConfig, Option<LearningConstants>)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let file: FileConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    file.system.validate()?;
    let constants = file
        .constants
        .map(|c| LearningConstants::new(c.delta, c.l_smooth, c.sigma, c.m_dissim, c.g_bound))
        .transpose()?;
    Ok((file.system, constants))
}

/// Apply the --model switch: the base variant analyzes the config with the
/// central stage removed, the extended variant requires one.
fn apply_model(mut config: SystemConfig, model: ModelArg) -> Result<(SystemConfig, ModelKind)> {
    match model {
        ModelArg::Nocs => {
            config.cs = None;
            Ok((config, ModelKind::NoCs))
        }
        ModelArg::Cs => {
            if config.cs.is_none() {
                bail!("--model cs requires a cs block in the config");
            }
            Ok((config, ModelKind::WithCs))
        }
    }
}

fn require_constants(constants: Option<LearningConstants>) -> Result<LearningConstants> {
    constants.ok_or_else(|| {
        anyhow!("config has no constants block (delta, l_smooth, sigma, m_dissim, g_bound)")
    })
}

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Identity shared by every artifact of one run. The correlation id hashes
/// the deterministic inputs (command, version, argv, config path, seed) and
/// deliberately excludes the timestamp; it matches files to their manifest
/// and to reruns of the same invocation, it is not an integrity check.
struct RunContext {
    command: &'static str,
    config_path: Option<String>,
    seed: Option<u64>,
    correlation_id: String,
}

impl RunContext {
    fn new(command: &'static str, config: Option<&Path>, seed: Option<u64>) -> Self {
        let args: Vec<String> = std::env::args().skip(1).collect();
        let config_path = config.map(|p| p.display().to_string());
        let version = env!("CARGO_PKG_VERSION");
        let seed_text = seed.map(|s| s.to_string());
        let mut parts: Vec<&str> = vec![command, version];
        parts.extend(args.iter().map(String::as_str));
        if let Some(c) = &config_path {
            parts.push(c);
        }
        if let Some(s) = &seed_text {
            parts.push(s);
        }
        let correlation_id = format!("{:016x}", fnv1a64(&parts));
        RunContext {
            command,
            config_path,
            seed,
            correlation_id,
        }
    }

    fn write_manifest(&self, dir: &Path) -> Result<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            args: std::env::args().skip(1).collect(),
            config_path: self.config_path.clone(),
            seed: self.seed,
            out_dir: dir.display().to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            unix_timestamp: build_timestamp(),
            correlation_id: self.correlation_id.clone(),
        };
        write_json(dir, "manifest.json", &manifest)
    }

    /// CSV preamble: a comment line tying the file to its manifest, then the
    /// header. Plain '.' decimals, 17 significant digits per float.
    fn csv_header(&self, columns: &str) -> String {
        format!("# correlation_id {}\n{columns}\n", self.correlation_id)
    }
}

/// Provenance record written next to every artifact set.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    args: Vec<String>,
    config_path: Option<String>,
    seed: Option<u64>,
    out_dir: String,
    tool_version: String,
    unix_timestamp: u64,
    correlation_id: String,
}

fn fnv1a64(parts: &[&str]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325_u64;
    let prime = 0x0000_0100_0000_01b3_u64;
    for part in parts {
        for byte in part.as_bytes() {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(prime);
        }
        hash ^= 0x1f;
        hash = hash.wrapping_mul(prime);
    }
    hash
}

fn build_timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn ensure_out(out: &Option<PathBuf>) -> Result<Option<&Path>> {
    match out {
        None => Ok(None),
        Some(dir) => {
            fs::create_dir_all(dir)
                .with_context(|| format!("creating output directory {}", dir.display()))?;
            Ok(Some(dir.as_path()))
        }
    }
}

#[derive(Serialize)]
struct AnalyzeReport {
    correlation_id: String,
    model: ModelKind,
    eps: f64,
    m: usize,
    routing: Vec<f64>,
    lambda: f64,
    delays: Vec<f64>,
    jacobian: Vec<Vec<f64>>,
    throughput_gradient: Vec<f64>,
    k_eps: f64,
    k_eps_ceil: f64,
    k_eps_unbounded: f64,
    k_eps_unbounded_ceil: f64,
    eta_max: f64,
    tau_eps: f64,
    energy_per_round: f64,
    e_eps: f64,
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let ctx = RunContext::new("analyze", Some(&args.config), None);
    let (config, constants) = load_config(&args.config)?;
    let (config, model) = apply_model(config, args.model)?;
    let consts = require_constants(constants)?;
    let p = config.routing.as_slice();
    let m = config.m;
    let mu_cs = config.cs.as_ref().map(|cs| cs.mu_cs);
    let table = match mu_cs {
        None => buzen::normalization_constants(&config.clients, p, m)?,
        Some(mu) => buzen::normalization_constants_with_cs(&config.clients, p, m, mu)?,
    };
    let delay_report = analysis::delay_report(&table, &config.clients, p, m, mu_cs)?;
    let gradient = match mu_cs {
        None => analysis::throughput_gradient(&table, &config.clients, p, m)?,
        Some(mu) => analysis::throughput_gradient_cs(&table, &config.clients, p, m, mu)?,
    };
    let bounded = complexity::complexity_report(
        &config,
        &consts,
        args.eps,
        complexity::BoundVariant::BoundedG,
    )?;
    let unbounded = complexity::complexity_report(
        &config,
        &consts,
        args.eps,
        complexity::BoundVariant::UnboundedG,
    )?;
    let report = AnalyzeReport {
        correlation_id: ctx.correlation_id.clone(),
        model,
        eps: args.eps,
        m,
        routing: p.to_vec(),
        lambda: bounded.lambda,
        delays: delay_report.delays,
        jacobian: delay_report.jacobian,
        throughput_gradient: gradient,
        k_eps: bounded.k_eps,
        k_eps_ceil: bounded.k_eps.ceil(),
        k_eps_unbounded: unbounded.k_eps,
        k_eps_unbounded_ceil: unbounded.k_eps.ceil(),
        eta_max: bounded.eta_max,
        tau_eps: bounded.tau_eps,
        energy_per_round: bounded.energy_round,
        e_eps: bounded.e_eps,
    };
    println!(
        "model {model}, m {m}: throughput {}, rounds to eps {}, time {}, energy {}",
        report.lambda, report.k_eps, report.tau_eps, report.e_eps
    );
    println!("delays: {:?}", report.delays);
    println!("learning-rate ceiling: {}", report.eta_max);
    if let Some(dir) = ensure_out(&args.out)? {
        write_json(dir, "report.json", &report)?;
        ctx.write_manifest(dir)?;
        println!("wrote {}", dir.join("report.json").display());
    }
    Ok(())
}

#[derive(Serialize)]
struct OptimizeReport {
    correlation_id: String,
    objective: String,
    model: ModelKind,
    eps: f64,
    rho: Option<f64>,
    m_star: usize,
    p_star: Vec<f64>,
    objective_value: f64,
    restarts_used: usize,
    iterations: usize,
    tau_eps: f64,
    e_eps: f64,
}

fn objective_kind(arg: ObjectiveArg) -> optimize::ObjectiveKind {
    match arg {
        ObjectiveArg::Rounds => optimize::ObjectiveKind::MinRounds,
        ObjectiveArg::Throughput => optimize::ObjectiveKind::MaxThroughput,
        ObjectiveArg::Time => optimize::ObjectiveKind::MinTime,
        ObjectiveArg::Energy => optimize::ObjectiveKind::MinEnergy,
        ObjectiveArg::Joint => optimize::ObjectiveKind::JointTimeEnergy,
    }
}

fn objective_name(arg: ObjectiveArg) -> &'static str {
    match arg {
        ObjectiveArg::Rounds => "rounds",
        ObjectiveArg::Throughput => "throughput",
        ObjectiveArg::Time => "time",
        ObjectiveArg::Energy => "energy",
        ObjectiveArg::Joint => "joint",
    }
}

fn cmd_optimize(args: OptimizeArgs) -> Result<()> {
    let ctx = RunContext::new("optimize", Some(&args.config), Some(args.seed));
    let (config, constants) = load_config(&args.config)?;
    let (config, model) = apply_model(config, args.model)?;
    let consts = require_constants(constants)?;
    let spec = optimize::ObjectiveSpec::new(
        objective_kind(args.objective),
        args.rho,
        args.eps,
        consts,
        model,
    )?;
    let opts = optimize::OptimizeOptions {
        seed: args.seed,
        ..optimize::OptimizeOptions::default()
    };
    let result = match args.fixed_m {
        Some(m) => optimize::optimize_routing(&config, &spec, m, None, &opts)?,
        None => {
            if args.m_max < 1 {
                bail!("--m-max must be at least 1");
            }
            optimize::search_concurrency(&config, &spec, 1..=args.m_max, &opts)?
        }
    };
    let (tau, energy) = optimize::operating_point_costs(
        &config,
        &consts,
        args.eps,
        model,
        &result.p_star,
        result.m_star,
    )?;
    let report = OptimizeReport {
        correlation_id: ctx.correlation_id.clone(),
        objective: objective_name(args.objective).to_string(),
        model,
        eps: args.eps,
        rho: args.rho,
        m_star: result.m_star,
        p_star: result.p_star.clone(),
        objective_value: result.objective_value,
        restarts_used: result.restarts_used,
        iterations: result.trace.len(),
        tau_eps: tau,
        e_eps: energy,
    };
    println!(
        "{} optimum at m = {}: objective {}, time {}, energy {}",
        report.objective, report.m_star, report.objective_value, tau, energy
    );
    println!("routing: {:?}", report.p_star);
    if let Some(dir) = ensure_out(&args.out)? {
        write_json(dir, "report.json", &report)?;
        let mut csv = ctx.csv_header("iteration,objective");
        for point in &result.trace {
            let _ = writeln!(csv, "{},{}", point.iteration, float(point.objective));
        }
        write_text(dir, "trace.csv", &csv)?;
        ctx.write_manifest(dir)?;
        println!("wrote {}", dir.join("report.json").display());
    }
    Ok(())
}

#[derive(Serialize)]
struct ParetoReport {
    correlation_id: String,
    model: ModelKind,
    eps: f64,
    points: Vec<optimize::ParetoPoint>,
}

fn cmd_pareto(args: ParetoArgs) -> Result<()> {
    let ctx = RunContext::new("pareto", Some(&args.config), Some(args.seed));
    let (config, constants) = load_config(&args.config)?;
    let (config, model) = apply_model(config, args.model)?;
    let consts = require_constants(constants)?;
    if args.m_max < 1 {
        bail!("--m-max must be at least 1");
    }
    let opts = optimize::OptimizeOptions {
        seed: args.seed,
        ..optimize::OptimizeOptions::default()
    };
    let points = optimize::pareto_sweep(
        &config,
        &consts,
        args.eps,
        model,
        &args.rho,
        1..=args.m_max,
        &opts,
    )?;
    println!("rho sweep over {} points:", points.len());
    for point in &points {
        println!(
            "  rho {:>5}: m {} time {} energy {}",
            point.rho, point.m_star, point.tau, point.energy
        );
    }
    if let Some(dir) = ensure_out(&args.out)? {
        let n = config.n();
        let mut columns = String::from("rho,m_star,objective,tau,energy,tau_norm,energy_norm");
        for j in 0..n {
            let _ = write!(columns, ",p_{j}");
        }
        let mut csv = ctx.csv_header(&columns);
        for point in &points {
            let _ = write!(
                csv,
                "{},{},{},{},{},{},{}",
                float(point.rho),
                point.m_star,
                float(point.objective_value),
                float(point.tau),
                float(point.energy),
                float(point.tau_norm),
                float(point.energy_norm)
            );
            for value in &point.p_star {
                let _ = write!(csv, ",{}", float(*value));
            }
            csv.push('\n');
        }
        write_text(dir, "pareto.csv", &csv)?;
        let report = ParetoReport {
            correlation_id: ctx.correlation_id.clone(),
            model,
            eps: args.eps,
            points,
        };
        write_json(dir, "report.json", &report)?;
        ctx.write_manifest(dir)?;
        println!("wrote {}", dir.join("pareto.csv").display());
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulateReport {
    correlation_id: String,
    model: ModelKind,
    law: simulate::ServiceLaw,
    stats: simulate::SimStats,
}

fn trace_kind_name(kind: simulate::TraceKind) -> &'static str {
    match kind {
        simulate::TraceKind::Dispatch => "dispatch",
        simulate::TraceKind::DownlinkDone => "downlink_done",
        simulate::TraceKind::ComputeDone => "compute_done",
        simulate::TraceKind::UplinkDone => "uplink_done",
        simulate::TraceKind::CentralDone => "central_done",
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let ctx = RunContext::new("simulate", Some(&args.config), Some(args.seed));
    let (config, _) = load_config(&args.config)?;
    let (config, model) = apply_model(config, args.model)?;
    let horizon = match (args.rounds, args.time_limit) {
        (Some(r), None) => simulate::Horizon::Rounds(r),
        (None, Some(t)) => simulate::Horizon::Time(t),
        _ => unreachable!("clap enforces exactly one horizon flag"),
    };
    let warmup = args
        .warmup
        .unwrap_or_else(|| simulate::default_warmup(config.m));
    let (stats, trace) = if args.trace {
        let (stats, trace) =
            simulate::run_simulation_traced(&config, model, args.law, horizon, warmup, args.seed)?;
        (stats, Some(trace))
    } else {
        (
            simulate::run_simulation(&config, model, args.law, horizon, warmup, args.seed)?,
            None,
        )
    };
    println!(
        "{} rounds measured over {} time units: throughput {} (se {})",
        stats.rounds_completed, stats.window, stats.empirical_throughput, stats.throughput_se
    );
    println!("delays: {:?}", stats.empirical_delays);
    println!("energy per round: {}", stats.energy_per_round);
    let report = SimulateReport {
        correlation_id: ctx.correlation_id.clone(),
        model,
        law: args.law,
        stats,
    };
    if let Some(dir) = ensure_out(&args.out)? {
        write_json(dir, "report.json", &report)?;
        if let Some(trace) = &trace {
            let mut csv = ctx.csv_header("time,kind,client,task,updates_applied");
            for event in trace {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{}",
                    float(event.time),
                    trace_kind_name(event.kind),
                    event.client,
                    event.task,
                    event.updates_applied
                );
            }
            write_text(dir, "trace.csv", &csv)?;
        }
        ctx.write_manifest(dir)?;
        println!("wrote {}", dir.join("report.json").display());
    }
    Ok(())
}

#[derive(Serialize)]
struct EtaRun {
    eta: f64,
    final_loss: f64,
    diverged: bool,
}

#[derive(Serialize)]
struct TaskSummary {
    n: usize,
    dim: usize,
    heterogeneity: f64,
    noise_sigma: f64,
    f_star: f64,
    initial_loss: f64,
}

#[derive(Serialize)]
struct LearnReport {
    correlation_id: String,
    model: ModelKind,
    law: simulate::ServiceLaw,
    eps: f64,
    rounds: u64,
    seed: u64,
    task: TaskSummary,
    constants: LearningConstants,
    eta_max: f64,
    runs: Vec<EtaRun>,
    chosen_eta: f64,
    final_loss: f64,
    final_suboptimality: f64,
}

fn cmd_learn(args: LearnArgs) -> Result<()> {
    let ctx = RunContext::new("learn", Some(&args.config), Some(args.seed));
    let (config, _) = load_config(&args.config)?;
    let (config, model) = apply_model(config, args.model)?;
    let task = learn::make_synthetic_task(
        config.n(),
        args.dim,
        args.heterogeneity,
        args.noise,
        args.seed,
    )?;
    let consts = learn::estimate_constants(
        &task,
        args.samples,
        args.radius,
        args.seed ^ 0x9E37_79B9_7F4A_7C15,
    )?;
    let bounded = complexity::complexity_report(
        &config,
        &consts,
        args.eps,
        complexity::BoundVariant::BoundedG,
    )?;
    let eta_max = bounded.eta_max;
    let candidates = match args.eta {
        Some(eta) => vec![eta],
        None => learn::eta_candidates(eta_max),
    };
    let mut runs = Vec::with_capacity(candidates.len());
    let mut best: Option<learn::LearnResult> = None;
    for &eta in &candidates {
        let result = learn::run_generalized_async_sgd(
            &task,
            &config,
            model,
            args.law,
            eta,
            args.rounds,
            args.seed,
        )?;
        runs.push(EtaRun {
            eta,
            final_loss: result.final_loss,
            diverged: result.diverged,
        });
        let better = match &best {
            None => true,
            Some(b) => {
                (b.diverged && !result.diverged)
                    || (b.diverged == result.diverged && result.final_loss < b.final_loss)
            }
        };
        if better {
            best = Some(result);
        }
    }
    let best = best.expect("at least one learning rate ran");
    let report = LearnReport {
        correlation_id: ctx.correlation_id.clone(),
        model,
        law: args.law,
        eps: args.eps,
        rounds: args.rounds,
        seed: args.seed,
        task: TaskSummary {
            n: config.n(),
            dim: args.dim,
            heterogeneity: args.heterogeneity,
            noise_sigma: args.noise,
            f_star: task.f_star,
            initial_loss: task.loss(&task.w0),
        },
        constants: consts,
        eta_max,
        runs,
        chosen_eta: best.eta,
        final_loss: best.final_loss,
        final_suboptimality: best.final_loss - task.f_star,
    };
    println!(
        "trained {} rounds at eta {}: loss {} (optimal {}), suboptimality {}{}",
        args.rounds,
        best.eta,
        best.final_loss,
        task.f_star,
        report.final_suboptimality,
        if best.diverged { " [diverged]" } else { "" }
    );
    if let Some(dir) = ensure_out(&args.out)? {
        write_json(dir, "report.json", &report)?;
        let mut csv = ctx.csv_header("k,t,energy,loss,grad_norm_sq,client,staleness");
        for point in &best.trajectory {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                point.k,
                float(point.t),
                float(point.energy),
                float(point.loss),
                float(point.grad_norm_sq),
                point.client,
                point.staleness
            );
        }
        write_text(dir, "trace.csv", &csv)?;
        ctx.write_manifest(dir)?;
        println!("wrote {}", dir.join("report.json").display());
    }
    Ok(())
}

fn random_clients(rng: &mut ChaCha8Rng, n: usize) -> Vec<ClientProfile> {
    (0..n)
        .map(|_| {
            ClientProfile::from_rates(
                rng.gen_range(0.3..4.0),
                rng.gen_range(0.3..4.0),
                rng.gen_range(0.3..4.0),
            )
        })
        .collect()
}

fn random_routing(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

fn check(ok: bool, message: String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(anyhow!(message))
    }
}

fn suite_constants(with_cs: bool) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(if with_cs { 11 } else { 10 });
    for round in 0..12 {
        let n = rng.gen_range(1..=3);
        let m = rng.gen_range(1..=4);
        let clients = random_clients(&mut rng, n);
        let p = random_routing(&mut rng, n);
        let mu_cs = with_cs.then(|| rng.gen_range(0.5..4.0));
        let table = match mu_cs {
            None => buzen::normalization_constants(&clients, &p, m)?,
            Some(mu) => buzen::normalization_constants_with_cs(&clients, &p, m, mu)?,
        };
        let oracle = buzen::brute_force_constant(&clients, &p, m, mu_cs)?;
        let got = table.value(m);
        check(
            (got - oracle).abs() <= 1e-10 * oracle,
            format!("instance {round}: recursion {got} vs enumeration {oracle}"),
        )?;
    }
    Ok(())
}

fn suite_delays() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for round in 0..10 {
        let n = rng.gen_range(1..=3);
        let m = rng.gen_range(1..=5);
        let clients = random_clients(&mut rng, n);
        let p = random_routing(&mut rng, n);
        let mu_cs = (round % 2 == 0).then(|| rng.gen_range(0.5..4.0));
        let table = match mu_cs {
            None => buzen::normalization_constants(&clients, &p, m)?,
            Some(mu) => buzen::normalization_constants_with_cs(&clients, &p, m, mu)?,
        };
        let delays = match mu_cs {
            None => analysis::expected_delays(&table, &clients, &p, m)?,
            Some(mu) => analysis::expected_delays_cs(&table, &clients, &p, m, mu)?,
        };
        let total: f64 = delays.iter().sum();
        check(
            (total - (m as f64 - 1.0)).abs() <= 1e-9,
            format!("instance {round}: delay sum {total} vs {}", m - 1),
        )?;
        let oracle = buzen::brute_force_client_sums(&clients, &p, m - 1, mu_cs)?;
        for (i, (d, o)) in delays.iter().zip(&oracle).enumerate() {
            check(
                (d - o).abs() <= 1e-8 * o.max(1.0),
                format!("instance {round} client {i}: delay {d} vs enumeration {o}"),
            )?;
        }
    }
    Ok(())
}

fn suite_gradients() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for &mu_cs in &[None, Some(2.5)] {
        let n = 3;
        let m = 4;
        let clients = random_clients(&mut rng, n);
        let p = random_routing(&mut rng, n);
        let build = |p: &[f64]| match mu_cs {
            None => buzen::normalization_constants(&clients, p, m),
            Some(mu) => buzen::normalization_constants_with_cs(&clients, p, m, mu),
        };
        let table = build(&p)?;
        let report = analysis::delay_report(&table, &clients, &p, m, mu_cs)?;
        let grad = match mu_cs {
            None => analysis::throughput_gradient(&table, &clients, &p, m)?,
            Some(mu) => analysis::throughput_gradient_cs(&table, &clients, &p, m, mu)?,
        };
        let lambda = analysis::throughput(&table);
        let h = 1e-6;
        for j in 0..n {
            let mut hi = p.clone();
            hi[j] += h;
            let mut lo = p.clone();
            lo[j] -= h;
            let table_hi = build(&hi)?;
            let table_lo = build(&lo)?;
            let d_hi = match mu_cs {
                None => analysis::expected_delays(&table_hi, &clients, &hi, m)?,
                Some(mu) => analysis::expected_delays_cs(&table_hi, &clients, &hi, m, mu)?,
            };
            let d_lo = match mu_cs {
                None => analysis::expected_delays(&table_lo, &clients, &lo, m)?,
                Some(mu) => analysis::expected_delays_cs(&table_lo, &clients, &lo, m, mu)?,
            };
            for i in 0..n {
                let fd = (d_hi[i] - d_lo[i]) / (2.0 * h);
                let got = report.jacobian[i][j];
                check(
                    (got - fd).abs() <= 1e-5 * got.abs().max(fd.abs()).max(1.0),
                    format!("jacobian[{i}][{j}] {got} vs finite difference {fd}"),
                )?;
            }
            let fd = (analysis::throughput(&table_hi) - analysis::throughput(&table_lo))
                / (2.0 * h);
            check(
                (grad[j] - fd).abs() <= 1e-5 * grad[j].abs().max(fd.abs()).max(1e-3),
                format!(
                    "throughput gradient [{j}] {} vs finite difference {fd}",
                    grad[j]
                ),
            )?;
        }
        let euler: f64 = grad.iter().zip(&p).map(|(g, pi)| g * pi).sum();
        check(
            (euler + lambda).abs() <= 1e-8 * lambda,
            format!("degree-minus-one identity: sum p grad = {euler} vs -{lambda}"),
        )?;
    }
    Ok(())
}

fn suite_energy_identity() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let consts = LearningConstants::new(1.0, 2.0, 0.5, 1.0, 3.0)?;
    for round in 0..8 {
        let n = rng.gen_range(1..=4);
        let per_task_cost: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..5.0)).collect();
        let cs_cost = rng.gen_range(0.0..2.0);
        let profile = complexity::EnergyProfile {
            per_task_cost,
            cs_cost,
        };
        let eps = rng.gen_range(0.01..1.0);
        let p_star = complexity::energy_optimal_routing(&profile);
        let k = complexity::round_complexity(&consts, &p_star, &vec![0.0; n], 1, eps)?;
        let direct = k * complexity::energy_per_round(&profile, &p_star);
        let closed = complexity::minimal_energy(&consts, &profile, eps)?;
        check(
            (direct - closed).abs() <= 1e-9 * closed,
            format!("instance {round}: direct optimum energy {direct} vs closed form {closed}"),
        )?;
    }
    Ok(())
}

fn suite_simulator() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let clients = random_clients(&mut rng, 2);
    let p = random_routing(&mut rng, 2);
    let routing = RoutingVector::new(p.clone())?;
    let m = 3;
    for &mu_cs in &[None, Some(2.0)] {
        let cs = mu_cs.map(|mu| CsParams { mu_cs: mu, p_cs: 0.5 });
        let config = SystemConfig::new(clients.clone(), routing.clone(), m, cs)?;
        let model = if mu_cs.is_some() {
            ModelKind::WithCs
        } else {
            ModelKind::NoCs
        };
        let table = match mu_cs {
            None => buzen::normalization_constants(&clients, &p, m)?,
            Some(mu) => buzen::normalization_constants_with_cs(&clients, &p, m, mu)?,
        };
        let lambda = analysis::throughput(&table);
        let delays = match mu_cs {
            None => analysis::expected_delays(&table, &clients, &p, m)?,
            Some(mu) => analysis::expected_delays_cs(&table, &clients, &p, m, mu)?,
        };
        let stats = simulate::run_simulation(
            &config,
            model,
            simulate::ServiceLaw::Exponential,
            simulate::Horizon::Rounds(40_000),
            2_000,
            99,
        )?;
        check(
            (stats.empirical_throughput - lambda).abs() <= 5.0 * stats.throughput_se,
            format!(
                "throughput {} vs closed form {lambda} (se {})",
                stats.empirical_throughput, stats.throughput_se
            ),
        )?;
        for (i, (emp, (closed, se))) in stats
            .empirical_delays
            .iter()
            .zip(delays.iter().zip(&stats.delay_se))
            .enumerate()
        {
            check(
                (emp - closed).abs() <= 5.0 * se,
                format!("client {i} delay {emp} vs closed form {closed} (se {se})"),
            )?;
        }
    }
    Ok(())
}

type OracleSuite = (&'static str, fn() -> Result<()>);

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    let ctx = RunContext::new("validate", None, None);
    let suites: Vec<OracleSuite> = vec![
        ("normalization constants, base variant", || {
            suite_constants(false)
        }),
        ("normalization constants, central-server variant", || {
            suite_constants(true)
        }),
        ("delay conservation and enumeration", suite_delays),
        ("gradients against finite differences", suite_gradients),
        ("optimal-energy closed form", suite_energy_identity),
        ("simulator against closed forms", suite_simulator),
    ];
    let total = suites.len();
    for (index, (name, suite)) in suites.into_iter().enumerate() {
        suite().with_context(|| format!("oracle suite {}/{total} ({name}) failed", index + 1))?;
        println!("oracle suite {}/{total} ({name}): passed", index + 1);
    }
    println!("all {total} oracle suites passed");
    if let Some(dir) = ensure_out(&args.out)? {
        ctx.write_manifest(dir)?;
    }
    Ok(())
}
