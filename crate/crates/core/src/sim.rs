//! Synchronous round loop over every solver, metric capture and trace files.
//!
//! # Configuration schema
//!
//! A single run ([`RunConfig`]) and an experiment file ([`ExperimentConfig`])
//! are JSON objects; unknown fields are rejected.
//!
//! ```json
//! {
//!   "name": "fig1_desk",
//!   "problem": { "synth": { "n": 10, "m": 50, "p": 20, "sparsity": 5, "noise_sd": 0.1 } },
//!   "topologies": [ { "kind": "cycle", "n": 10 }, { "kind": "complete", "n": 10 } ],
//!   "algorithms": [ { "algorithm": "dda" }, { "algorithm": "adda", "step": 0.001 } ],
//!   "rounds": 3000,
//!   "seed": 1
//! }
//! ```
//!
//! * `problem`: `{"synth": SynthSpec}` or `{"file": "<path to problem text file>"}`.
//! * topology `kind`: `cycle`, `complete`, `mod_ring` (n = 8) or `edge_list`
//!   with `"edges": [[1, 2], ...]` (1-based); `mixing`: `metropolis`
//!   (default) or `uniform` (complete graph only).
//! * `algorithm`: `dda`, `adda`, `classic_dda`, `pg_extra`, `apm`,
//!   `central_da`, `central_ada`; `step`: `"auto"` (default), a positive
//!   number, or `{"per_l": c}` for `a = c / L` (for `classic_dda` this is
//!   the base `a` of `a / sqrt(t)`); `apm_l`: the
//!   smoothness parameter of APM (default: the problem's `L`).
//! * optional: `cadence` (record every k rounds), `bounds` (emit rate-bound
//!   columns), `timing` (fill `wall_ms`), `resolution` (smallest error the
//!   trace must resolve; the reference optimum is certified to 1/100 of it),
//!   `output` (directory for trace files).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::graph::{build_topology, metropolis_weights, GraphError, MixingMatrix, TopologyKind};
use crate::problem::{reference_optimum, synth_lasso, DecentralizedProblem, ProblemError, ReferenceSolution, SynthSpec};
use crate::prox::{make_prox, ProxError, ProxSetup};
use crate::solvers::{
    deviation_norm, distance_to, mean, AdaState, AddaState, ApmState, ClassicDdaState, DaState, DdaState, Network,
    PgExtraState, SolverError, StepSchedule,
};
use crate::theory::{
    adda_max_stepsize, auto_dda_step, compute_adda_constants, compute_constants, dda_slack,
    unconstrained_dda_bound, DdaCondition, TheoremConstants, TheoryError,
};

/// Objective values above this abort a run as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;
/// Rounds recorded at most, before the cadence kicks in.
pub const MAX_RECORDS: usize = 2000;

pub const CSV_HEADER: &str = "t,obj_err,cons_err,dual_cons_err,avg_obj_err,avg_cons_gap,bound_t1,bound_t2,wall_ms";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("runs do not share a problem instance: {0} vs {1}")]
    MismatchedProblem(String, String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Prox(#[from] ProxError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl SimError {
    /// Whether the failure came from the reference-optimum oracle.
    pub fn is_oracle_failure(&self) -> bool {
        matches!(self, Self::Problem(ProblemError::OracleFailed { .. }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dda,
    Adda,
    ClassicDda,
    PgExtra,
    Apm,
    CentralDa,
    CentralAda,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Self::Dda,
        Self::Adda,
        Self::ClassicDda,
        Self::PgExtra,
        Self::Apm,
        Self::CentralDa,
        Self::CentralAda,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Self::Dda => "dda",
            Self::Adda => "adda",
            Self::ClassicDda => "classic_dda",
            Self::PgExtra => "pg_extra",
            Self::Apm => "apm",
            Self::CentralDa => "central_da",
            Self::CentralAda => "central_ada",
        }
    }
}

impl FromStr for Algorithm {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| SimError::Config(format!("unknown algorithm `{s}`")))
    }
}

/// `"auto"`, an explicit positive step, or `{"per_l": c}` for `a = c / L`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum StepSpec {
    #[default]
    Auto,
    Value(f64),
    PerL(f64),
}

impl StepSpec {
    fn check(&self) -> Result<(), SimError> {
        match *self {
            Self::Value(v) | Self::PerL(v) if !(v.is_finite() && v > 0.0) => {
                Err(SimError::Config(format!("step must be positive and finite, got {v}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PerL {
    per_l: f64,
}

impl Serialize for StepSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::Auto => s.serialize_str("auto"),
            Self::Value(v) => s.serialize_f64(*v),
            Self::PerL(c) => PerL { per_l: *c }.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for StepSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
            Scaled(PerL),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(Self::Value(v)),
            Raw::Text(t) if t == "auto" => Ok(Self::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("step must be \"auto\" or a number, got `{t}`"))),
            Raw::Scaled(p) => Ok(Self::PerL(p.per_l)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingRule {
    #[default]
    Metropolis,
    /// `P = 11^T / n`; complete graph only.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub n: usize,
    /// 1-based pairs, for `edge_list` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    #[serde(default)]
    pub mixing: MixingRule,
}

impl TopologySpec {
    pub fn new(kind: TopologyKind, n: usize) -> Self {
        Self { kind, n, edges: None, mixing: MixingRule::Metropolis }
    }

    pub fn label(&self) -> String {
        let kind = serde_json::to_value(self.kind).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        match self.mixing {
            MixingRule::Metropolis => kind,
            MixingRule::Uniform => format!("{kind}_uniform"),
        }
    }

    /// Builds the mixing matrix. A single agent gets `P = [1]`.
    pub fn mixing_matrix(&self) -> Result<MixingMatrix, SimError> {
        if self.n == 1 {
            return Ok(MixingMatrix::uniform(1)?);
        }
        let edges: Option<Vec<(usize, usize)>> = match &self.edges {
            Some(list) => Some(
                list.iter()
                    .map(|&[i, j]| {
                        if i == 0 || j == 0 {
                            Err(SimError::Config(format!("edge ({i}, {j}): agents are numbered from 1")))
                        } else {
                            Ok((i - 1, j - 1))
                        }
                    })
                    .collect::<Result<_, _>>()?,
            ),
            None => None,
        };
        if edges.is_some() && self.kind != TopologyKind::EdgeList {
            return Err(SimError::Config("`edges` is only valid with kind `edge_list`".into()));
        }
        let graph = build_topology(self.kind, self.n, edges.as_deref())?;
        match self.mixing {
            MixingRule::Metropolis => Ok(metropolis_weights(&graph)?),
            MixingRule::Uniform if self.kind == TopologyKind::Complete => Ok(MixingMatrix::uniform(self.n)?),
            MixingRule::Uniform => Err(SimError::Config("uniform mixing requires the complete graph".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSource {
    Synth(SynthSpec),
    File(PathBuf),
}

impl ProblemSource {
    pub fn build(&self, seed: u64) -> Result<DecentralizedProblem, SimError> {
        match self {
            Self::Synth(spec) => Ok(synth_lasso(spec, seed)?.0),
            Self::File(path) => Ok(DecentralizedProblem::load(path)?),
        }
    }
}

fn default_resolution() -> f64 {
    1e-6
}

/// One solver on one network for `rounds` rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub topology: TopologySpec,
    pub problem: ProblemSource,
    #[serde(default)]
    pub step: StepSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apm_l: Option<f64>,
    pub rounds: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cadence: Option<usize>,
    #[serde(default)]
    pub bounds: bool,
    #[serde(default)]
    pub timing: bool,
    #[serde(default = "default_resolution")]
    pub resolution: f64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.rounds == 0 {
            return Err(SimError::Config("rounds must be at least 1".into()));
        }
        if self.cadence == Some(0) {
            return Err(SimError::Config("cadence must be at least 1".into()));
        }
        self.step.check()?;
        if let Some(l) = self.apm_l {
            if !(l.is_finite() && l > 0.0) {
                return Err(SimError::Config(format!("apm_l must be positive and finite, got {l}")));
            }
        }
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Err(SimError::Config(format!("resolution must be positive, got {}", self.resolution)));
        }
        if self.topology.n == 0 {
            return Err(SimError::Config("topology needs at least one agent".into()));
        }
        if let ProblemSource::Synth(spec) = &self.problem {
            if spec.n != self.topology.n {
                return Err(SimError::Config(format!(
                    "problem has {} agents but the topology has {}",
                    spec.n, self.topology.n
                )));
            }
        }
        Ok(())
    }

    /// Every round up to [`MAX_RECORDS`] rounds, else every `ceil(T / 2000)`.
    pub fn effective_cadence(&self) -> usize {
        self.cadence.unwrap_or_else(|| default_cadence(self.rounds))
    }
}

pub fn default_cadence(rounds: usize) -> usize {
    if rounds <= MAX_RECORDS {
        1
    } else {
        rounds.div_ceil(MAX_RECORDS)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmEntry {
    pub algorithm: Algorithm,
    #[serde(default)]
    pub step: StepSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apm_l: Option<f64>,
}

/// Several algorithms on several topologies over one problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub problem: ProblemSource,
    pub topologies: Vec<TopologySpec>,
    pub algorithms: Vec<AlgorithmEntry>,
    pub rounds: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cadence: Option<usize>,
    #[serde(default)]
    pub bounds: bool,
    #[serde(default)]
    pub timing: bool,
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses and validates; relative problem-file paths resolve against `base`.
    pub fn from_json(text: &str, base: Option<&Path>) -> Result<Self, SimError> {
        let mut cfg: Self = serde_json::from_str(text)?;
        if let (ProblemSource::File(path), Some(base)) = (&mut cfg.problem, base) {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io { path: path.to_owned(), source })?;
        Self::from_json(&text, path.parent())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(SimError::Config(format!("name `{}` must be non-empty [A-Za-z0-9_-]", self.name)));
        }
        if self.topologies.is_empty() || self.algorithms.is_empty() {
            return Err(SimError::Config("need at least one topology and one algorithm".into()));
        }
        self.runs().iter().try_for_each(RunConfig::validate)
    }

    /// Topology-major expansion into single runs.
    pub fn runs(&self) -> Vec<RunConfig> {
        self.topologies
            .iter()
            .flat_map(|topology| {
                self.algorithms.iter().map(move |entry| RunConfig {
                    algorithm: entry.algorithm,
                    topology: topology.clone(),
                    problem: self.problem.clone(),
                    step: entry.step,
                    apm_l: entry.apm_l,
                    rounds: self.rounds,
                    seed: self.seed,
                    cadence: self.cadence,
                    bounds: self.bounds,
                    timing: self.timing,
                    resolution: self.resolution,
                })
            })
            .collect()
    }
}

/// A problem with its certified reference optimum.
#[derive(Debug, Clone)]
pub struct Instance {
    pub problem: DecentralizedProblem,
    pub reference: ReferenceSolution,
    pub hash: String,
    /// Certified upper bound on `f(x_ref) - f*` used to make bound checks conservative.
    pub f_star_gap: f64,
}

impl Instance {
    /// Solves for the reference optimum to `resolution / 100`.
    pub fn prepare(problem: DecentralizedProblem, resolution: f64) -> Result<Self, SimError> {
        let reference = reference_optimum(&problem, resolution / 100.0)?;
        let f_star_gap = if problem.constraint().radius().is_some() { reference.certificate } else { 0.0 };
        Ok(Self { hash: problem.content_hash(), problem, reference, f_star_gap })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let problem = cfg.problem.build(cfg.seed)?;
        if problem.n() != cfg.topology.n {
            return Err(SimError::Config(format!(
                "problem has {} agents but the topology has {}",
                problem.n(),
                cfg.topology.n
            )));
        }
        Self::prepare(problem, cfg.resolution)
    }
}

/// Step parameters after resolving `auto`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedStep {
    /// `a` (the base of `a/sqrt(t)` for classic DDA); the smoothness parameter for APM.
    pub value: f64,
    pub auto: bool,
}

fn is_unconstrained(prob: &DecentralizedProblem) -> bool {
    prob.constraint().radius().is_none()
}

fn dda_condition(prob: &DecentralizedProblem) -> DdaCondition {
    if is_unconstrained(prob) {
        DdaCondition::Unconstrained
    } else {
        DdaCondition::Constrained
    }
}

/// Resolves `auto`: DDA and classic DDA `0.99 x` the DDA step bound, ADDA
/// `1/(6L)`, PG-EXTRA `1/(4L)`, APM `L`, centralized DA and ADA `1/(2L)`.
pub fn resolve_step(cfg: &RunConfig, prob: &DecentralizedProblem, mixing: &MixingMatrix) -> Result<ResolvedStep, SimError> {
    let l = prob.lipschitz();
    if cfg.algorithm == Algorithm::Apm {
        return Ok(match cfg.apm_l {
            Some(v) => ResolvedStep { value: v, auto: false },
            None => ResolvedStep { value: l, auto: true },
        });
    }
    match cfg.step {
        StepSpec::Value(v) => return Ok(ResolvedStep { value: v, auto: false }),
        StepSpec::PerL(c) => return Ok(ResolvedStep { value: c / l, auto: false }),
        StepSpec::Auto => {}
    }
    let value = match cfg.algorithm {
        Algorithm::Dda | Algorithm::ClassicDda => auto_dda_step(l, mixing.beta(), dda_condition(prob))?,
        Algorithm::Adda => adda_max_stepsize(l),
        Algorithm::PgExtra => 0.25 / l,
        Algorithm::CentralDa | Algorithm::CentralAda => 0.5 / l,
        Algorithm::Apm => unreachable!(),
    };
    Ok(ResolvedStep { value, auto: true })
}

/// A warning when an explicit step breaks the step condition of DDA or ADDA.
pub fn step_warning(
    algorithm: Algorithm,
    a: f64,
    prob: &DecentralizedProblem,
    mixing: &MixingMatrix,
) -> Result<Option<String>, SimError> {
    let l = prob.lipschitz();
    Ok(match algorithm {
        Algorithm::Dda if dda_slack(a, l, mixing.beta(), dda_condition(prob))? <= 0.0 => {
            Some(format!("step a = {a:e} violates the DDA step condition (L = {l:e}, beta = {:.6})", mixing.beta()))
        }
        Algorithm::Adda if a > adda_max_stepsize(l) => {
            Some(format!("step a = {a:e} exceeds the ADDA limit 1/(6L) = {:e}", adda_max_stepsize(l)))
        }
        _ => None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub round: usize,
    pub reason: String,
}

/// Quantities kept for bound checks but not written to the CSV.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `max_i f(x_tilde_i) - f*` (DDA).
    pub avg_agent_obj_err: Option<f64>,
    /// `D / t` (DDA).
    pub consensus_bound: Option<f64>,
    /// `||v - 1 (x) v_bar||` and `||u - 1 (x) u_bar||` (ADDA).
    pub v_dev: Option<f64>,
    pub u_dev: Option<f64>,
    /// `(a_t / A_t) C_p` (ADDA).
    pub lemma_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    /// `f(x_bar) - f*`; `x_bar` averages the primary iterate (`v` for ADDA).
    pub obj_err: f64,
    /// `sqrt(sum_i ||x_i - x*||^2)`.
    pub cons_err: f64,
    /// `||z - 1 (x) z_bar||` (DDA, classic DDA) or `||q - 1 (x) q_bar||` (ADDA).
    pub dual_cons_err: Option<f64>,
    /// `f(y_tilde) - f*` for DDA; for the others the error of the running
    /// average of `x_bar` over rounds `1..=t`.
    pub avg_obj_err: f64,
    /// `max_i ||x_tilde_i - y_tilde||^2` (DDA).
    pub avg_cons_gap: Option<f64>,
    /// `C / (a t)` for DDA, or the unconstrained-DDA bound on `f(x_tilde_i) - f*`.
    pub bound_t1: Option<f64>,
    /// ADDA bound on `f(v_bar) - f*`.
    pub bound_t2: Option<f64>,
    pub wall_ms: Option<f64>,
    pub diagnostics: Diagnostics,
}

/// Largest violation (`lhs - rhs`, scaled as in the rate statements) of each
/// bound over all recorded rounds; `None` where the bound does not apply.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub checked: usize,
    pub dda_objective: Option<f64>,
    pub dda_consensus: Option<f64>,
    pub adda_objective: Option<f64>,
    pub adda_v_consensus: Option<f64>,
    pub adda_u_consensus: Option<f64>,
    pub unconstrained_dda: Option<f64>,
}

impl BoundReport {
    pub fn holds(&self, tol: f64) -> bool {
        [
            self.dda_objective,
            self.dda_consensus,
            self.adda_objective,
            self.adda_v_consensus,
            self.adda_u_consensus,
            self.unconstrained_dda,
        ]
        .into_iter()
        .flatten()
        .all(|v| v <= tol)
    }
}

fn fold_max(acc: &mut Option<f64>, v: f64) {
    *acc = Some(acc.map_or(v, |a| a.max(v)));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub config: RunConfig,
    pub problem_hash: String,
    pub step: ResolvedStep,
    pub lipschitz: f64,
    pub beta: f64,
    pub f_star: f64,
    pub f_star_gap: f64,
    pub constants: Option<TheoremConstants>,
    pub warnings: Vec<String>,
    pub failure: Option<Failure>,
    pub records: Vec<RoundRecord>,
}

fn field(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl RunTrace {
    pub fn diverged(&self) -> bool {
        self.failure.is_some()
    }

    /// First recorded round with `obj_err <= threshold`.
    pub fn rounds_to(&self, threshold: f64) -> Option<usize> {
        self.records.iter().find(|r| r.obj_err <= threshold).map(|r| r.t)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.t,
                field(Some(r.obj_err)),
                field(Some(r.cons_err)),
                field(r.dual_cons_err),
                field(Some(r.avg_obj_err)),
                field(r.avg_cons_gap),
                field(r.bound_t1),
                field(r.bound_t2),
                field(r.wall_ms),
            );
        }
        out
    }

    /// Config, problem hash, constants, warnings and library version.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "version": crate::VERSION,
            "config": self.config,
            "problem_hash": self.problem_hash,
            "step": self.step,
            "lipschitz": self.lipschitz,
            "beta": self.beta,
            "f_star": self.f_star,
            "f_star_gap": self.f_star_gap,
            "constants": self.constants,
            "warnings": self.warnings,
            "failure": self.failure,
            "records": self.records.len(),
        })
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), SimError> {
        let csv = dir.join(format!("{stem}.csv"));
        let json = dir.join(format!("{stem}.json"));
        write_file(&csv, &self.to_csv())?;
        write_file(&json, &(serde_json::to_string_pretty(&self.sidecar())? + "\n"))?;
        Ok((csv, json))
    }

    /// Evaluates every applicable rate bound on the recorded rounds `t >= 1`.
    /// Objective errors are inflated by the certified gap of `f*`.
    pub fn bound_report(&self) -> BoundReport {
        let mut rep = BoundReport::default();
        let Some(k) = self.constants else {
            return rep;
        };
        let slack = self.f_star_gap;
        for r in self.records.iter().filter(|r| r.t >= 1) {
            let t = r.t as f64;
            rep.checked += 1;
            if let (Some(b), Some(kd)) = (r.bound_t1, k.dda) {
                match r.diagnostics.avg_agent_obj_err {
                    Some(agent_err) => fold_max(&mut rep.unconstrained_dda, t * (agent_err + slack) - t * b),
                    None => fold_max(&mut rep.dda_objective, k.a * t * (r.avg_obj_err + slack) - kd.c),
                }
            }
            if let (Some(gap), Some(kd)) = (r.avg_cons_gap, k.dda) {
                if r.diagnostics.consensus_bound.is_some() {
                    fold_max(&mut rep.dda_consensus, t * gap - kd.d);
                }
            }
            if r.bound_t2.is_some() {
                let (_, big_a) = crate::theory::adda_weights(k.a, r.t);
                if let Some(rhs) = k.adda_scaled_bound(r.t) {
                    fold_max(&mut rep.adda_objective, big_a * (r.obj_err + slack) - rhs);
                }
            }
            if let Some(lb) = r.diagnostics.lemma_bound {
                if let Some(v) = r.diagnostics.v_dev {
                    fold_max(&mut rep.adda_v_consensus, v - lb);
                }
                if let Some(u) = r.diagnostics.u_dev {
                    fold_max(&mut rep.adda_u_consensus, u - lb);
                }
            }
        }
        rep
    }
}

fn write_file(path: &Path, body: &str) -> Result<(), SimError> {
    std::fs::write(path, body).map_err(|source| SimError::Io { path: path.to_owned(), source })
}

/// Running solver state; ADDA and ADA sit in `*Start` at `t = 0` because
/// their first state is round 1.
enum Runner {
    Dda(DdaState),
    AddaStart,
    Adda(AddaState),
    Classic(ClassicDdaState),
    PgExtra(PgExtraState),
    Apm(ApmState),
    Da(DaState),
    AdaStart,
    Ada(AdaState),
}

impl Runner {
    fn init(alg: Algorithm, net: &Network<'_>, step: f64) -> Result<Self, SolverError> {
        Ok(match alg {
            Algorithm::Dda => Self::Dda(DdaState::init(net)?),
            Algorithm::Adda => Self::AddaStart,
            Algorithm::ClassicDda => Self::Classic(ClassicDdaState::init(net)),
            Algorithm::PgExtra => Self::PgExtra(PgExtraState::init(net)?),
            Algorithm::Apm => Self::Apm(ApmState::init(net, step)?),
            Algorithm::CentralDa => Self::Da(DaState::init(net.prox)),
            Algorithm::CentralAda => Self::AdaStart,
        })
    }

    fn advance(self, net: &Network<'_>, step: f64) -> Result<Self, SolverError> {
        Ok(match self {
            Self::Dda(s) => Self::Dda(s.step(net, step)?),
            Self::AddaStart => Self::Adda(AddaState::init(net, step)?),
            Self::Adda(s) => Self::Adda(s.step(net)?),
            Self::Classic(s) => Self::Classic(s.step(net, StepSchedule::InverseSqrt(step))?),
            Self::PgExtra(s) => Self::PgExtra(s.step(net, step)?),
            Self::Apm(s) => Self::Apm(s.step(net, step)?),
            Self::Da(s) => Self::Da(s.step(net.problem, net.prox, step)?),
            Self::AdaStart => Self::Ada(AdaState::init(net.problem, net.prox, step)?),
            Self::Ada(s) => Self::Ada(s.step(net.problem, net.prox)?),
        })
    }

    /// Primary iterate per agent; centralized methods replicate theirs.
    fn primal(&self, net: &Network<'_>) -> Vec<DVector<f64>> {
        let n = net.n();
        match self {
            Self::Dda(s) => s.x().to_vec(),
            Self::AddaStart | Self::AdaStart => vec![net.prox.center().clone(); n],
            Self::Adda(s) => s.v().to_vec(),
            Self::Classic(s) => s.x().to_vec(),
            Self::PgExtra(s) => s.x().to_vec(),
            Self::Apm(s) => s.x().to_vec(),
            Self::Da(s) => vec![s.x().clone(); n],
            Self::Ada(s) => vec![s.v().clone(); n],
        }
    }

    fn dual_deviation(&self, net: &Network<'_>) -> Result<Option<f64>, SolverError> {
        Ok(match self {
            Self::Dda(s) => Some(deviation_norm(s.z())),
            Self::Classic(s) => Some(deviation_norm(s.z())),
            Self::Adda(s) => Some(deviation_norm(s.q())),
            Self::AddaStart => {
                let x0 = vec![net.prox.center().clone(); net.n()];
                Some(deviation_norm(&net.local_gradients(&x0)?))
            }
            _ => None,
        })
    }
}

/// Runs one configuration end to end, including the reference optimum.
pub fn run(cfg: &RunConfig) -> Result<RunTrace, SimError> {
    let instance = Instance::from_config(cfg)?;
    run_on(cfg, &instance)
}

/// Runs one configuration on a prepared instance.
pub fn run_on(cfg: &RunConfig, instance: &Instance) -> Result<RunTrace, SimError> {
    cfg.validate()?;
    let prob = &instance.problem;
    if prob.n() != cfg.topology.n {
        return Err(SimError::Config(format!("problem has {} agents but the topology has {}", prob.n(), cfg.topology.n)));
    }
    let mixing = cfg.topology.mixing_matrix()?;
    let prox = default_prox(prob)?;
    let net = Network::new(prob, &mixing, &prox)?;
    let step = resolve_step(cfg, prob, &mixing)?;
    let x_star = instance.reference.x_star();
    let mut warnings = Vec::new();
    if !step.auto {
        warnings.extend(step_warning(cfg.algorithm, step.value, prob, &mixing)?);
    }
    let constants = if cfg.bounds { bound_constants(cfg.algorithm, &net, step.value, &x_star, &mut warnings)? } else { None };

    let mut trace = RunTrace {
        config: cfg.clone(),
        problem_hash: instance.hash.clone(),
        step,
        lipschitz: prob.lipschitz(),
        beta: mixing.beta(),
        f_star: instance.reference.f_star,
        f_star_gap: instance.f_star_gap,
        constants,
        warnings,
        failure: None,
        records: Vec::new(),
    };
    let recorder = Recorder { net: &net, x_star: &x_star, f_star: instance.reference.f_star, constants, algorithm: cfg.algorithm };
    let cadence = cfg.effective_cadence();
    let started = cfg.timing.then(Instant::now);
    let mut runner = Runner::init(cfg.algorithm, &net, step.value)?;
    let mut bar_sum = DVector::zeros(prob.dim());
    for t in 0..=cfg.rounds {
        if t > 0 {
            runner = match runner.advance(&net, step.value) {
                Ok(next) => next,
                Err(SolverError::Diverged { round, reason }) => {
                    trace.failure = Some(Failure { round, reason });
                    break;
                }
                Err(e) => return Err(e.into()),
            };
        }
        let xs = runner.primal(&net);
        let x_bar = mean(&xs);
        let f_bar = prob.objective(&x_bar)?;
        if !f_bar.is_finite() || f_bar > DIVERGENCE_THRESHOLD {
            trace.failure = Some(Failure { round: t, reason: format!("objective {f_bar:e} above {DIVERGENCE_THRESHOLD:e}") });
            break;
        }
        if t > 0 {
            bar_sum += &x_bar;
        }
        if t % cadence == 0 || t == cfg.rounds {
            let mut rec = recorder.record(t, &runner, &xs, f_bar, &bar_sum)?;
            rec.wall_ms = started.map(|s| s.elapsed().as_secs_f64() * 1e3);
            if !record_is_finite(&rec) {
                trace.failure = Some(Failure { round: t, reason: "non-finite metric".into() });
                break;
            }
            trace.records.push(rec);
        }
    }
    Ok(trace)
}

fn record_is_finite(r: &RoundRecord) -> bool {
    [Some(r.obj_err), Some(r.cons_err), r.dual_cons_err, Some(r.avg_obj_err), r.avg_cons_gap]
        .into_iter()
        .flatten()
        .all(f64::is_finite)
}

fn bound_constants(
    alg: Algorithm,
    net: &Network<'_>,
    a: f64,
    x_star: &DVector<f64>,
    warnings: &mut Vec<String>,
) -> Result<Option<TheoremConstants>, SimError> {
    let result = match alg {
        Algorithm::Dda => compute_constants(net.problem, net.mixing, net.prox, a, x_star),
        Algorithm::Adda => compute_adda_constants(net.problem, net.mixing, net.prox, a, x_star),
        _ => return Ok(None),
    };
    match result {
        Ok(k) => Ok(Some(k)),
        Err(e @ (TheoryError::ConditionViolated { .. } | TheoryError::Unbounded)) => {
            warnings.push(format!("bound columns omitted: {e}"));
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

struct Recorder<'a> {
    net: &'a Network<'a>,
    x_star: &'a DVector<f64>,
    f_star: f64,
    constants: Option<TheoremConstants>,
    algorithm: Algorithm,
}

impl Recorder<'_> {
    fn record(
        &self,
        t: usize,
        runner: &Runner,
        xs: &[DVector<f64>],
        f_bar: f64,
        bar_sum: &DVector<f64>,
    ) -> Result<RoundRecord, SimError> {
        let prob = self.net.problem;
        let mut rec = RoundRecord {
            t,
            obj_err: f_bar - self.f_star,
            cons_err: distance_to(xs, self.x_star),
            dual_cons_err: runner.dual_deviation(self.net)?,
            avg_obj_err: f_bar - self.f_star,
            avg_cons_gap: None,
            bound_t1: None,
            bound_t2: None,
            wall_ms: None,
            diagnostics: Diagnostics::default(),
        };
        if t > 0 {
            rec.avg_obj_err = prob.objective(&(bar_sum / t as f64))? - self.f_star;
        }
        match runner {
            Runner::Dda(s) => {
                let y_avg = s.y_avg();
                let x_avg = s.x_avg();
                rec.avg_obj_err = prob.objective(&y_avg)? - self.f_star;
                rec.avg_cons_gap = Some(x_avg.iter().map(|x| (x - &y_avg).norm_squared()).fold(0.0, f64::max));
                if let (Some(k), true) = (self.constants, t > 0) {
                    if is_unconstrained(prob) {
                        rec.bound_t1 = Some(unconstrained_dda_bound(&k, self.x_star, t)?);
                        let mut worst = f64::NEG_INFINITY;
                        for x in &x_avg {
                            worst = worst.max(prob.objective(x)? - self.f_star);
                        }
                        rec.diagnostics.avg_agent_obj_err = Some(worst);
                    } else {
                        rec.bound_t1 = k.dda_objective_bound(t);
                        rec.diagnostics.consensus_bound = k.dda_consensus_bound(t);
                    }
                }
            }
            Runner::Adda(s) => {
                if let Some(k) = self.constants {
                    rec.bound_t2 = k.adda_objective_bound(t);
                    rec.diagnostics.lemma_bound = k.adda_primal_consensus_bound(t);
                    rec.diagnostics.v_dev = Some(deviation_norm(s.v()));
                    rec.diagnostics.u_dev = Some(deviation_norm(s.u()));
                }
            }
            _ => {}
        }
        debug_assert!(self.algorithm != Algorithm::Dda || rec.avg_cons_gap.is_some());
        Ok(rec)
    }
}

/// Runs sharing one problem instance, with labels for the joined table.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub traces: Vec<RunTrace>,
}

impl Comparison {
    /// `t` followed by `<label>_obj_err`, `<label>_cons_err`, `<label>_avg_obj_err`
    /// per run; rows cover every recorded `t`, missing entries empty.
    pub fn to_csv(&self) -> String {
        let mut rows: BTreeMap<usize, Vec<Option<&RoundRecord>>> = BTreeMap::new();
        for (k, trace) in self.traces.iter().enumerate() {
            for r in &trace.records {
                rows.entry(r.t).or_insert_with(|| vec![None; self.traces.len()])[k] = Some(r);
            }
        }
        let mut out = String::from("t");
        for label in &self.labels {
            let _ = write!(out, ",{label}_obj_err,{label}_cons_err,{label}_avg_obj_err");
        }
        out.push('\n');
        for (t, cells) in rows {
            let _ = write!(out, "{t}");
            for cell in cells {
                let _ = write!(
                    out,
                    ",{},{},{}",
                    field(cell.map(|r| r.obj_err)),
                    field(cell.map(|r| r.cons_err)),
                    field(cell.map(|r| r.avg_obj_err))
                );
            }
            out.push('\n');
        }
        out
    }
}

/// Runs every configuration on the same problem instance (reference optimum
/// solved once), in parallel, and aligns the traces by round.
pub fn compare(configs: &[RunConfig]) -> Result<Comparison, SimError> {
    let first = configs.first().ok_or_else(|| SimError::Config("nothing to compare".into()))?;
    for cfg in configs {
        cfg.validate()?;
    }
    let base_problem = first.problem.build(first.seed)?;
    let base_hash = base_problem.content_hash();
    for cfg in &configs[1..] {
        let same_source = cfg.problem == first.problem && cfg.seed == first.seed;
        if !same_source {
            let hash = cfg.problem.build(cfg.seed)?.content_hash();
            if hash != base_hash {
                return Err(SimError::MismatchedProblem(base_hash, hash));
            }
        }
        if cfg.topology != first.topology {
            return Err(SimError::Config(format!(
                "runs use different topologies: {} vs {}",
                first.topology.label(),
                cfg.topology.label()
            )));
        }
    }
    let resolution = configs.iter().map(|c| c.resolution).fold(f64::INFINITY, f64::min);
    let instance = Instance::prepare(base_problem, resolution)?;
    if instance.problem.n() != first.topology.n {
        return Err(SimError::Config(format!(
            "problem has {} agents but the topology has {}",
            instance.problem.n(),
            first.topology.n
        )));
    }
    let traces = std::thread::scope(|scope| {
        let handles: Vec<_> = configs.iter().map(|cfg| scope.spawn(|| run_on(cfg, &instance))).collect();
        handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect::<Result<Vec<_>, _>>()
    })?;
    let mut labels: Vec<String> = Vec::with_capacity(configs.len());
    for cfg in configs {
        let base = cfg.algorithm.id().to_string();
        let dup = labels.iter().filter(|l| **l == base || l.starts_with(&format!("{base}#"))).count();
        labels.push(if dup == 0 { base } else { format!("{base}#{}", dup + 1) });
    }
    Ok(Comparison { labels, traces })
}

/// The full prox setup used by every run: `d(x) = ||x||^2 / 2` on the problem's set.
pub fn default_prox(prob: &DecentralizedProblem) -> Result<ProxSetup, SimError> {
    Ok(make_prox(DVector::zeros(prob.dim()), *prob.constraint())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdaReport {
    pub a: f64,
    pub auto: bool,
    pub admissible: bool,
    pub rho: f64,
    pub gamma: f64,
    /// Supremum of steps under the beta-only sufficient condition, if it applies.
    pub explicit_bound: Option<f64>,
    /// Supremum of admissible steps under the exact condition.
    pub max_step: f64,
    /// `C` and `D`; absent when the step is inadmissible.
    pub c: Option<f64>,
    pub d: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddaReport {
    pub a: f64,
    pub admissible: bool,
    pub c_p: Option<f64>,
    pub c_g: Option<f64>,
    /// Growth per round of the scaled ADDA objective bound.
    pub per_round: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConstants {
    pub topology: String,
    pub n: usize,
    pub beta: f64,
    pub lambda2: f64,
    pub lipschitz: f64,
    pub pi_sq: f64,
    pub d_x_star: f64,
    pub diameter: Option<f64>,
    pub dda: DdaReport,
    pub adda: AddaReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub name: String,
    pub version: String,
    pub problem_hash: String,
    pub f_star: f64,
    pub topologies: Vec<TopologyConstants>,
}

/// Rate-bound constants of an experiment, per topology, at the steps the
/// experiment would use for DDA and ADDA (`auto` when not listed).
pub fn constants_report(exp: &ExperimentConfig) -> Result<ConstantsReport, SimError> {
    exp.validate()?;
    let runs = exp.runs();
    let instance = Instance::from_config(&runs[0])?;
    let prob = &instance.problem;
    let prox = default_prox(prob)?;
    let x_star = instance.reference.x_star();
    let l = prob.lipschitz();
    let step_of = |alg: Algorithm, topology: &TopologySpec, mixing: &MixingMatrix| {
        let entry = exp.algorithms.iter().find(|e| e.algorithm == alg);
        let cfg = RunConfig {
            algorithm: alg,
            step: entry.map_or(StepSpec::Auto, |e| e.step),
            topology: topology.clone(),
            ..runs[0].clone()
        };
        resolve_step(&cfg, prob, mixing)
    };
    let mut topologies = Vec::new();
    for topology in &exp.topologies {
        let mixing = topology.mixing_matrix()?;
        let beta = mixing.beta();
        let dda_step = step_of(Algorithm::Dda, topology, &mixing)?;
        let a = dda_step.value;
        let rho = crate::theory::rho_m(a, l, beta)?;
        let condition = dda_condition(prob);
        let dda_full = compute_constants(prob, &mixing, &prox, a, &x_star);
        let admissible = dda_slack(a, l, beta, condition)? > 0.0;
        let dda = DdaReport {
            a,
            auto: dda_step.auto,
            admissible,
            rho,
            gamma: crate::theory::gamma_coefficient(a, l, rho),
            explicit_bound: crate::theory::explicit_dda_bound(l, beta)?,
            max_step: crate::theory::dda_max_stepsize(l, beta, condition)?,
            c: dda_full.as_ref().ok().and_then(|k| k.dda).map(|d| d.c),
            d: dda_full.as_ref().ok().and_then(|k| k.dda).map(|d| d.d),
        };
        let adda_a = step_of(Algorithm::Adda, topology, &mixing)?.value;
        let adda_k = compute_adda_constants(prob, &mixing, &prox, adda_a, &x_star).ok();
        let adda = AddaReport {
            a: adda_a,
            admissible: adda_a <= adda_max_stepsize(l),
            c_p: adda_k.and_then(|k| k.adda).map(|k| k.c_p),
            c_g: adda_k.and_then(|k| k.adda).map(|k| k.c_g),
            per_round: adda_k.and_then(|k| k.adda_per_round()),
        };
        topologies.push(TopologyConstants {
            topology: topology.label(),
            n: prob.n(),
            beta,
            lambda2: mixing.lambda2(),
            lipschitz: l,
            pi_sq: crate::theory::gradient_dissimilarity(prob, prox.center())?,
            d_x_star: prox.distance(&x_star),
            diameter: prob.constraint().diameter(),
            dda,
            adda,
        });
    }
    Ok(ConstantsReport {
        name: exp.name.clone(),
        version: crate::VERSION.to_string(),
        problem_hash: instance.hash.clone(),
        f_star: instance.reference.f_star,
        topologies,
    })
}
