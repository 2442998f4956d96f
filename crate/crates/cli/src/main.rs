//! `dualavg`: run simulations, compare algorithms, inspect rate constants.
//!
//! Exit codes: 0 success, 2 invalid input, 3 a run diverged, 4 the
//! reference optimum (or a projection self-check) failed. Errors are also
//! reported as one JSON object on standard error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualavg::sim::{self, constants_report, resolve_step, step_warning, ExperimentConfig, Instance, RunConfig, RunTrace};
use dualavg::{l1_ball_project, SimError};
use nalgebra::DVector;
use rand::Rng;

/// Environment variable naming the default output directory.
const OUT_ENV: &str = "DUALAVG_OUT";

#[derive(Parser, Debug)]
#[command(name = "dualavg", version, about = "Decentralized dual averaging simulations")]
struct Cli {
    /// Print progress to standard error.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every algorithm/topology pair of a config; one CSV and JSON sidecar each.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Run even if an explicit step violates the step condition.
        #[arg(long)]
        force: bool,
    },
    /// Run all algorithms per topology on one instance and write an aligned table.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Print the rate-bound constants of a config as JSON.
    Constants {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Check the l1-ball projection on one vector or on random inputs.
    ProjectCheck {
        /// Comma-separated vector to project.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "random")]
        vector: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        /// Number of random cases compared against a bisection solver.
        #[arg(long)]
        random: Option<usize>,
        #[arg(long, default_value_t = 10)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: $DUALAVG_OUT, then the config's `output`, then `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Diverged(String),
    Oracle(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Invalid(_) => 2,
            Self::Diverged(_) => 3,
            Self::Oracle(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::Invalid(_) => "validation",
            Self::Diverged(_) => "divergence",
            Self::Oracle(_) => "oracle",
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Invalid(m) | Self::Diverged(m) | Self::Oracle(m) => m,
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        if e.is_oracle_failure() {
            Self::Oracle(e.to_string())
        } else {
            Self::Invalid(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", serde_json::json!({ "error": f.kind(), "code": f.code(), "message": f.message() }));
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run { common, force } => cmd_run(common, *force, cli.verbose),
        Command::Compare { common } => cmd_compare(common, cli.verbose),
        Command::Constants { common } => cmd_constants(common),
        Command::ProjectCheck { vector, radius, random, dim, seed } => {
            cmd_project_check(vector.as_deref(), *radius, *random, *dim, *seed)
        }
    }
}

fn load(common: &CommonArgs) -> Result<ExperimentConfig, Failure> {
    let mut exp = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        exp.seed = seed;
    }
    Ok(exp)
}

fn out_dir(common: &CommonArgs, exp: &ExperimentConfig) -> Result<PathBuf, Failure> {
    let dir = common
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| exp.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Invalid(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn stem(exp: &ExperimentConfig, cfg: &RunConfig) -> String {
    format!("{}_{}_{}", exp.name, cfg.topology.label(), cfg.algorithm.id())
}

fn write_trace(trace: &RunTrace, dir: &Path, stem: &str) -> Result<(), Failure> {
    let (csv, json) = trace.write(dir, stem)?;
    println!("{}", csv.display());
    println!("{}", json.display());
    Ok(())
}

fn divergence(traces: &[(String, &RunTrace)]) -> Result<(), Failure> {
    let failed: Vec<String> = traces
        .iter()
        .filter_map(|(stem, t)| t.failure.as_ref().map(|f| format!("{stem} at round {}: {}", f.round, f.reason)))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Diverged(failed.join("; ")))
    }
}

fn cmd_run(common: &CommonArgs, force: bool, verbose: bool) -> Result<(), Failure> {
    let exp = load(common)?;
    let runs = exp.runs();
    let problem = runs[0].problem.build(exp.seed)?;
    for cfg in &runs {
        let mixing = cfg.topology.mixing_matrix().map_err(Failure::from)?;
        let step = resolve_step(cfg, &problem, &mixing)?;
        if step.auto || force {
            continue;
        }
        if let Some(w) = step_warning(cfg.algorithm, step.value, &problem, &mixing)? {
            return Err(Failure::Invalid(format!("{}: {w}; pass --force to run anyway", stem(&exp, cfg))));
        }
    }
    let dir = out_dir(common, &exp)?;
    let instance = Instance::prepare(problem, runs.iter().map(|r| r.resolution).fold(f64::INFINITY, f64::min))?;
    let mut traces = Vec::with_capacity(runs.len());
    for cfg in &runs {
        if verbose {
            eprintln!("running {}", stem(&exp, cfg));
        }
        let trace = sim::run_on(cfg, &instance)?;
        write_trace(&trace, &dir, &stem(&exp, cfg))?;
        traces.push((stem(&exp, cfg), trace));
    }
    divergence(&traces.iter().map(|(s, t)| (s.clone(), t)).collect::<Vec<_>>())
}

fn cmd_compare(common: &CommonArgs, verbose: bool) -> Result<(), Failure> {
    let exp = load(common)?;
    let dir = out_dir(common, &exp)?;
    let runs = exp.runs();
    let mut all = Vec::new();
    for group in runs.chunks(exp.algorithms.len()) {
        let label = group[0].topology.label();
        if verbose {
            eprintln!("comparing {} algorithms on {label}", group.len());
        }
        let cmp = sim::compare(group)?;
        for (cfg, trace) in group.iter().zip(&cmp.traces) {
            write_trace(trace, &dir, &stem(&exp, cfg))?;
            for w in &trace.warnings {
                eprintln!("warning: {}: {w}", stem(&exp, cfg));
            }
        }
        let path = dir.join(format!("{}_{label}_compare.csv", exp.name));
        std::fs::write(&path, cmp.to_csv()).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
        println!("{}", path.display());
        all.extend(group.iter().zip(cmp.traces).map(|(cfg, t)| (stem(&exp, cfg), t)));
    }
    divergence(&all.iter().map(|(s, t)| (s.clone(), t)).collect::<Vec<_>>())
}

fn cmd_constants(common: &CommonArgs) -> Result<(), Failure> {
    let exp = load(common)?;
    let report = constants_report(&exp)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Invalid(e.to_string()))?;
    let dir = out_dir(common, &exp)?;
    let path = dir.join(format!("{}_constants.json", exp.name));
    std::fs::write(&path, format!("{text}\n")).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    println!("{text}");
    Ok(())
}

/// Threshold by bisection; the independent reference for `--random`.
fn bisection_project(v: &DVector<f64>, radius: f64) -> DVector<f64> {
    if v.lp_norm(1) <= radius {
        return v.clone();
    }
    let (mut lo, mut hi) = (0.0, v.amax());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if v.iter().map(|x| (x.abs() - mid).max(0.0)).sum::<f64>() > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    v.map(|x| x.signum() * (x.abs() - theta).max(0.0))
}

fn cmd_project_check(
    vector: Option<&[f64]>,
    radius: f64,
    random: Option<usize>,
    dim: usize,
    seed: u64,
) -> Result<(), Failure> {
    let invalid = |e: dualavg::ProxError| Failure::Invalid(e.to_string());
    if let Some(values) = vector {
        let v = DVector::from_column_slice(values);
        let p = l1_ball_project(&v, radius).map_err(invalid)?;
        let out = serde_json::json!({
            "input": values,
            "radius": radius,
            "projection": p.as_slice(),
            "l1_norm": p.lp_norm(1),
            "kkt_residual": dualavg::prox::projection_kkt_residual(&v, &p, radius),
        });
        println!("{out}");
        return Ok(());
    }
    let cases = random.ok_or_else(|| Failure::Invalid("pass --vector or --random".into()))?;
    if dim == 0 {
        return Err(Failure::Invalid("--dim must be positive".into()));
    }
    let mut rng = dualavg::problem::seeded_rng(seed);
    let (mut max_dev, mut max_kkt, mut max_excess) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for _ in 0..cases {
        let v = DVector::from_fn(dim, |_, _| rng.random_range(-10.0..10.0));
        let r = rng.random_range(0.01..20.0);
        let p = l1_ball_project(&v, r).map_err(invalid)?;
        max_dev = max_dev.max((&p - bisection_project(&v, r)).amax());
        max_kkt = max_kkt.max(dualavg::prox::projection_kkt_residual(&v, &p, r));
        max_excess = max_excess.max(p.lp_norm(1) - r);
    }
    let ok = max_dev <= 1e-9 && max_kkt <= 1e-9 && max_excess <= dualavg::prox::FEASIBILITY_TOL;
    println!(
        "{}",
        serde_json::json!({
            "cases": cases,
            "dim": dim,
            "max_deviation": max_dev,
            "max_kkt_residual": max_kkt,
            "max_l1_excess": max_excess,
            "ok": ok,
        })
    );
    if ok {
        Ok(())
    } else {
        Err(Failure::Oracle("projection disagrees with the bisection reference".into()))
    }
}
