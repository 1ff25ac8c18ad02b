//! `sacsim`: trace and slice generation, single runs, sweeps, Q-table training and the
//! exact benchmark solver.

mod config;

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use slice_admission::engine::{self, metrics, run, MetricsReport};
use slice_admission::forecast::calibrate_naive;
use slice_admission::link_capacity::{generate_synthetic_rsl, ingest_rsl_trace, SyntheticRslParams};
use slice_admission::oracle::{solve_oracle, OracleMode};
use slice_admission::policies::{AdmitAll, CfMode, NaiveGreedy, PolicyKind, QLearner};
use slice_admission::scenario::{write_bundle, Scenario};
use slice_admission::slicing::{
    generate_slice_requests, generate_synthetic_flows, read_flows, write_flows, write_slice_requests, Catalog,
    SyntheticFlowParams, DEFAULT_KAPPA,
};
use slice_admission::suite::{cv_bucket, cv_bucket_label, trend_suite, SuiteParams, DEFAULT_CV_EDGES};
use slice_admission::sweep::{sweep, write_sweep_csv, SweepSpec};
use slice_admission::Execution;

use config::{resolve_seed, ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "sacsim", version, about = "Slice admission control simulator for a weather-affected mmWave link")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one policy on one scenario.
    Simulate(SimulateArgs),
    /// Run policies over a scenario collection and write a long-format CSV.
    Sweep(SweepArgs),
    /// Solve for the revenue-optimal admission vector.
    Oracle(OracleArgs),
    /// Train a Q-learning table over the configured scenarios.
    TrainPql(TrainArgs),
    /// Write a synthetic RSL trace.
    GenRsl(GenRslArgs),
    /// Turn flows (from a file or synthetic) into a slice request file.
    GenSlices(GenSlicesArgs),
    /// Fit the naive forecaster's per-step deviations on an RSL trace.
    Calibrate(CalibrateArgs),
    /// Write the CV-bucketed synthetic scenario suite as a bundle.
    GenSuite(GenSuiteArgs),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides the config seed and AWARESAC_SEED.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<(RunConfig, u64), ConfigError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        let seed = resolve_seed(self.seed, cfg.seed)?;
        Ok((cfg, seed))
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    qtable: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated policy names.
    #[arg(long, value_delimiter = ',', default_value = "random,naive-greedy,locally-optimal,naive-ql,predictive-ql")]
    policies: Vec<String>,
    /// Ascending CV bucket edges.
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.6")]
    cv_edges: Vec<f64>,
    /// Frozen table for naive-ql; without one the policy learns during each run.
    #[arg(long)]
    nql_table: Option<PathBuf>,
    #[arg(long)]
    pql_table: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
    /// Output CSV, default `<out_dir>/sweep.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "branch-and-bound")]
    mode: OracleMode,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Train the static-horizon variant instead of the predictive one.
    #[arg(long)]
    naive: bool,
    #[arg(long, default_value_t = 1000)]
    max_passes: usize,
}

#[derive(Args)]
struct GenRslArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1440)]
    length: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = SyntheticRslParams::default().baseline_dbm, allow_hyphen_values = true)]
    baseline_dbm: f64,
    #[arg(long, default_value_t = SyntheticRslParams::default().event_count)]
    events: usize,
    #[arg(long, default_value_t = SyntheticRslParams::default().event_depth_db)]
    depth_db: f64,
    #[arg(long, default_value_t = SyntheticRslParams::default().event_duration_min)]
    event_minutes: usize,
    #[arg(long, default_value_t = SyntheticRslParams::default().noise_std_db)]
    noise_db: f64,
}

#[derive(Args)]
struct GenSlicesArgs {
    #[arg(long)]
    out: PathBuf,
    /// Flow CSV; synthetic flows are drawn when absent.
    #[arg(long)]
    flows: Option<PathBuf>,
    /// Where to save the synthetic flows.
    #[arg(long)]
    flows_out: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    horizon: usize,
    /// canned or stats.
    #[arg(long, default_value = "canned")]
    catalog: String,
    #[arg(long, default_value_t = DEFAULT_KAPPA)]
    kappa: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    rsl: PathBuf,
    #[arg(long, default_value_t = slice_admission::forecast::DEFAULT_HORIZON)]
    horizon: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenSuiteArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    per_bucket: Option<usize>,
    /// TOML file with suite parameters.
    #[arg(long)]
    params: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::TrainPql(a) => cmd_train_pql(a),
        Command::GenRsl(a) => cmd_gen_rsl(a),
        Command::GenSlices(a) => cmd_gen_slices(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::GenSuite(a) => cmd_gen_suite(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(c) = e.downcast_ref::<ConfigError>() {
                eprintln!("error: invalid configuration: {c}");
                ExitCode::from(2)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        }
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SimulateMetrics {
    seed: u64,
    policy: MetricsReport,
    naive_greedy: MetricsReport,
    admit_all: MetricsReport,
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let (mut cfg, seed) = args.common.load()?;
    if let Some(p) = args.policy {
        cfg.policy.name = p;
    }
    if let Some(q) = args.qtable {
        cfg.policy.qtable = Some(q);
    }
    cfg.validate()?;
    let kind = cfg.policy_kind()?;
    let scenario = cfg.scenario()?;
    let fcs = cfg.forecasters(std::slice::from_ref(&scenario))?;
    let fc = fcs.get(0);

    let mut policy = kind.build(&cfg.policy_params(), cfg.qtable()?);
    let result = run(&scenario, policy.as_mut(), fc, seed)?;
    let ng = run(&scenario, &mut NaiveGreedy, fc, seed)?;
    let all = run(&scenario, &mut AdmitAll, fc, seed)?;
    let cv = scenario.cv();
    let report = SimulateMetrics {
        seed,
        policy: metrics(&result, Some(&ng), Some(&all), cv),
        naive_greedy: metrics(&ng, Some(&ng), Some(&all), cv),
        admit_all: metrics(&all, Some(&ng), Some(&all), cv),
    };

    write_json(&cfg.out_dir.join("result.json"), &result)?;
    let mut slots = create(&cfg.out_dir.join("slots.csv"))?;
    result.write_slots_csv(&mut slots)?;
    slots.flush()?;
    write_json(&cfg.out_dir.join("metrics.json"), &report)?;
    println!(
        "{} on {}: revenue {:.4} ({} of {} admitted), written to {}",
        result.policy,
        scenario.name,
        result.revenue(),
        result.admitted_count(),
        scenario.len(),
        cfg.out_dir.display()
    );
    Ok(())
}

fn exec(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<()> {
    let (cfg, seed) = args.common.load()?;
    cfg.validate()?;
    let mut kinds = Vec::new();
    for name in args.policies.iter().filter(|n| !n.trim().is_empty()) {
        kinds.push(name.parse::<PolicyKind>().map_err(|e| ConfigError::new("--policies", e.to_string()))?);
    }
    if args.cv_edges.windows(2).any(|w| w[0] >= w[1]) || args.cv_edges.iter().any(|e| !e.is_finite()) {
        return Err(ConfigError::new("--cv-edges", "edges must be finite and strictly ascending").into());
    }
    let mut tables = HashMap::new();
    for (kind, path) in [(PolicyKind::NaiveQl, &args.nql_table), (PolicyKind::PredictiveQl, &args.pql_table)] {
        if let Some(p) = path {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            tables.insert(kind, slice_admission::policies::QTable::read(std::io::BufReader::new(f))?);
        }
    }
    let scenarios = cfg.scenarios()?;
    let fcs = cfg.forecasters(&scenarios)?;
    let params = cfg.policy_params();
    let spec = SweepSpec { policies: &kinds, params: &params, tables: &tables, cv_edges: &args.cv_edges, seed };
    let rows = sweep(&scenarios, &fcs, &spec, exec(args.sequential));
    let out = args.out.unwrap_or_else(|| cfg.out_dir.join("sweep.csv"));
    let mut w = create(&out)?;
    write_sweep_csv(&rows, &mut w)?;
    w.flush()?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    println!("{} rows over {} scenarios ({failed} failed) written to {}", rows.len(), scenarios.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct OracleSummary<'a> {
    scenario: &'a str,
    mode: OracleMode,
    objective: f64,
    revenue: f64,
    reward: f64,
    penalty: f64,
    admitted: usize,
    offered: usize,
    nodes: u64,
}

fn cmd_oracle(args: OracleArgs) -> anyhow::Result<()> {
    let (cfg, _) = args.common.load()?;
    cfg.validate()?;
    let scenario = cfg.scenario()?;
    let sol = solve_oracle(&scenario, args.mode, exec(args.sequential))?;
    let mut w = create(&cfg.out_dir.join("decisions.csv"))?;
    sol.write_decisions(&mut w)?;
    w.flush()?;
    let mut w = create(&cfg.out_dir.join("fractions.csv"))?;
    sol.write_fractions(&mut w)?;
    w.flush()?;
    let summary = OracleSummary {
        scenario: &scenario.name,
        mode: args.mode,
        objective: sol.objective(),
        revenue: sol.totals.revenue,
        reward: sol.totals.reward,
        penalty: sol.totals.penalty,
        admitted: sol.z.iter().filter(|z| **z).count(),
        offered: scenario.len(),
        nodes: sol.nodes,
    };
    write_json(&cfg.out_dir.join("summary.json"), &summary)?;
    println!("oracle on {}: revenue {:.4}, {} of {} admitted", scenario.name, sol.totals.revenue, summary.admitted, summary.offered);
    Ok(())
}

#[derive(Serialize)]
struct TrainingSummary {
    mode: CfMode,
    seed: u64,
    scenarios: usize,
    passes: usize,
    updates: u64,
    converged: bool,
    hit_update_cap: bool,
    table_entries: usize,
    /// Frozen-table revenue per scenario, scenario `k` at seed `seed + k`.
    evaluation: Vec<f64>,
}

fn cmd_train_pql(args: TrainArgs) -> anyhow::Result<()> {
    let (cfg, seed) = args.common.load()?;
    cfg.validate()?;
    let scenarios = cfg.scenarios()?;
    if scenarios.is_empty() {
        bail!("no scenarios to train on");
    }
    let fcs = cfg.forecasters(&scenarios)?;
    let mode = if args.naive { CfMode::Static } else { CfMode::Predictive };
    let mut learner = QLearner::new(mode, cfg.q.clone());
    let report = engine::train(&mut learner, &scenarios, &fcs, seed, args.max_passes)?;

    let mut evaluation = Vec::with_capacity(scenarios.len());
    for (k, s) in scenarios.iter().enumerate() {
        evaluation.push(run(s, &mut learner, fcs.get(k), seed.wrapping_add(k as u64))?.revenue());
    }
    let stem = if args.naive { "nql" } else { "pql" };
    let mut w = create(&cfg.out_dir.join(format!("qtable-{stem}.txt")))?;
    learner.table.write(&mut w)?;
    w.flush()?;
    let mut w = create(&cfg.out_dir.join(format!("curve-{stem}.csv")))?;
    writeln!(w, "updates,epsilon,mean_abs_delta")?;
    for p in learner.curve() {
        writeln!(w, "{},{},{}", p.updates, p.epsilon, p.mean_abs_delta)?;
    }
    w.flush()?;
    let summary = TrainingSummary {
        mode,
        seed,
        scenarios: scenarios.len(),
        passes: report.passes,
        updates: report.updates,
        converged: report.converged,
        hit_update_cap: report.hit_update_cap,
        table_entries: learner.table.len(),
        evaluation,
    };
    write_json(&cfg.out_dir.join(format!("training-{stem}.json")), &summary)?;
    if !report.converged {
        eprintln!(
            "warning: NonConvergence: stopped after {} updates in {} passes without meeting the convergence rule; table written anyway",
            report.updates, report.passes
        );
    }
    println!("{} entries, {} updates, converged={}", learner.table.len(), report.updates, report.converged);
    Ok(())
}

fn cmd_gen_rsl(args: GenRslArgs) -> anyhow::Result<()> {
    let seed = resolve_seed(args.seed, None)?;
    let params = SyntheticRslParams {
        baseline_dbm: args.baseline_dbm,
        event_count: args.events,
        event_depth_db: args.depth_db,
        event_duration_min: args.event_minutes,
        noise_std_db: args.noise_db,
    };
    let trace = generate_synthetic_rsl(&params, args.length, seed)?;
    let mut w = create(&args.out)?;
    trace.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_gen_slices(args: GenSlicesArgs) -> anyhow::Result<()> {
    let seed = resolve_seed(args.seed, None)?;
    let flows = match &args.flows {
        Some(p) => read_flows(File::open(p).with_context(|| format!("opening {}", p.display()))?)?,
        None => generate_synthetic_flows(&SyntheticFlowParams::default(), args.horizon, seed),
    };
    if let Some(p) = &args.flows_out {
        let mut w = create(p)?;
        write_flows(&flows, &mut w)?;
        w.flush()?;
    }
    let catalog = match args.catalog.as_str() {
        "canned" => Catalog::canned(args.kappa),
        "stats" => Catalog::from_flows(&flows, args.kappa)?,
        other => return Err(ConfigError::new("--catalog", format!("expected canned or stats, got {other:?}")).into()),
    };
    // Slices re-opened for flow tails can start past the horizon; those are dropped.
    let requests = config::within_horizon(generate_slice_requests(&flows, &catalog)?, args.horizon);
    let mut w = create(&args.out)?;
    write_slice_requests(&requests, &mut w)?;
    w.flush()?;
    println!("{} flows packed into {} slice requests", flows.len(), requests.len());
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> anyhow::Result<()> {
    let f = File::open(&args.rsl).with_context(|| format!("opening {}", args.rsl.display()))?;
    let trace = ingest_rsl_trace(f, "calibration")?;
    let calibration = calibrate_naive(trace.samples(), args.horizon)?;
    let mut w = create(&args.out)?;
    calibration.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_gen_suite(args: GenSuiteArgs) -> anyhow::Result<()> {
    let seed = resolve_seed(args.seed, None)?;
    let mut params = match &args.params {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SuiteParams>(&text).map_err(|e| ConfigError::new("--params", e.to_string()))?
        }
        None => SuiteParams::default(),
    };
    if let Some(n) = args.per_bucket {
        params.per_bucket = n;
    }
    let suite = trend_suite(&params, seed)?;
    fs::create_dir_all(&args.out_dir)?;
    let mut entries = Vec::new();
    let mut index = create(&args.out_dir.join("suite.csv"))?;
    writeln!(index, "scenario,cv,cv_bucket")?;
    for s in &suite {
        entries.push(s.scenario.write_files(&args.out_dir, &s.scenario.name)?);
        let label = cv_bucket_label(cv_bucket(s.cv, &DEFAULT_CV_EDGES), &DEFAULT_CV_EDGES);
        writeln!(index, "{},{},{}", s.scenario.name, s.cv, label)?;
    }
    index.flush()?;
    let mut w = create(&args.out_dir.join("bundle.jsonl"))?;
    write_bundle(&entries, &mut w)?;
    w.flush()?;
    let srs: usize = suite.iter().map(|s| Scenario::len(&s.scenario)).sum();
    println!("{} scenarios, {srs} slice requests, written to {}", suite.len(), args.out_dir.display());
    Ok(())
}
