//! Decentralized LASSO instances: per-agent least-squares blocks over a shared
//! l1 ball, their gradients, smoothness constants and a certified reference
//! optimum.
//!
//! # Problem file format
//!
//! Plain UTF-8 text, whitespace separated, `#` starts a comment line:
//!
//! ```text
//! dualavg-problem v1
//! <n> <m>
//! <p_1> <p_2> ... <p_n>
//! <R>            # l1 radius, or `inf` for an unconstrained instance
//! <M_1 row 1 (m values)> <c_1[1]>
//! ...            # p_1 rows for agent 1, then p_2 rows for agent 2, ...
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so save/load is
//! bit-exact. Externally supplied data of the same shape loads through
//! [`DecentralizedProblem::from_text`].

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prox::{l1_ball_project, ConstraintKind, ConstraintSet, ProxError};

/// Generator used for every random draw in the crate.
pub type SimRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid problem size: {0}")]
    InvalidSize(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("agent index {index} out of range for {n} agents")]
    AgentOutOfRange { index: usize, n: usize },
    #[error("smoothness constant must be positive (all data matrices are zero)")]
    DegenerateSmoothness,
    #[error("non-finite value in problem data or query point")]
    NonFinite,
    #[error("reference optimum not certified: gap {gap:e} > tol {tol:e} after {iterations} iterations")]
    OracleFailed { gap: f64, tol: f64, iterations: usize },
    #[error("problem file parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Prox(#[from] ProxError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Local data `(M_i, c_i)` of one agent; `f_i(x) = ||M_i x - c_i||^2 / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentData {
    pub matrix: DMatrix<f64>,
    pub measurements: DVector<f64>,
}

impl AgentData {
    pub fn new(matrix: DMatrix<f64>, measurements: DVector<f64>) -> Result<Self, ProblemError> {
        if matrix.nrows() != measurements.len() {
            return Err(ProblemError::DimensionMismatch { expected: matrix.nrows(), got: measurements.len() });
        }
        Ok(Self { matrix, measurements })
    }

    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x - &self.measurements
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.residual(x).norm_squared()
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.matrix.tr_mul(&self.residual(x))
    }

    /// `sigma_1(M_i)^2`, from the smaller of the two Gram matrices.
    pub fn smoothness(&self) -> f64 {
        let m = &self.matrix;
        if m.nrows() == 0 || m.ncols() == 0 {
            return 0.0;
        }
        let gram = if m.nrows() <= m.ncols() { m * m.transpose() } else { m.tr_mul(m) };
        SymmetricEigen::new(gram).eigenvalues.max().max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecentralizedProblem {
    agents: Vec<AgentData>,
    constraint: ConstraintSet,
    lipschitz: f64,
}

impl DecentralizedProblem {
    pub fn new(agents: Vec<AgentData>, constraint: ConstraintSet) -> Result<Self, ProblemError> {
        if agents.is_empty() {
            return Err(ProblemError::InvalidSize("at least one agent is required".into()));
        }
        for a in &agents {
            if a.matrix.ncols() != constraint.dim {
                return Err(ProblemError::DimensionMismatch { expected: constraint.dim, got: a.matrix.ncols() });
            }
            if a.matrix.iter().chain(a.measurements.iter()).any(|v| !v.is_finite()) {
                return Err(ProblemError::NonFinite);
            }
        }
        let lipschitz = agents.iter().map(AgentData::smoothness).fold(0.0, f64::max);
        if lipschitz <= 0.0 {
            return Err(ProblemError::DegenerateSmoothness);
        }
        Ok(Self { agents, constraint, lipschitz })
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn dim(&self) -> usize {
        self.constraint.dim
    }

    pub fn agents(&self) -> &[AgentData] {
        &self.agents
    }

    pub fn constraint(&self) -> &ConstraintSet {
        &self.constraint
    }

    /// `L = max_i sigma_1(M_i)^2`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn agent(&self, i: usize) -> Result<&AgentData, ProblemError> {
        self.agents.get(i).ok_or(ProblemError::AgentOutOfRange { index: i, n: self.n() })
    }

    fn check_point(&self, x: &DVector<f64>) -> Result<(), ProblemError> {
        if x.len() != self.dim() {
            return Err(ProblemError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ProblemError::NonFinite);
        }
        Ok(())
    }

    /// `grad f_i(x) = M_i^T (M_i x - c_i)` for agent `i` (0-based).
    pub fn grad_i(&self, i: usize, x: &DVector<f64>) -> Result<DVector<f64>, ProblemError> {
        let agent = self.agent(i)?;
        self.check_point(x)?;
        Ok(agent.gradient(x))
    }

    pub fn local_objective(&self, i: usize, x: &DVector<f64>) -> Result<f64, ProblemError> {
        let agent = self.agent(i)?;
        self.check_point(x)?;
        Ok(agent.value(x))
    }

    /// `f(x) = (1/2n) sum_i ||M_i x - c_i||^2`.
    pub fn objective(&self, x: &DVector<f64>) -> Result<f64, ProblemError> {
        if x.len() != self.dim() {
            return Err(ProblemError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(self.agents.iter().map(|a| a.value(x)).sum::<f64>() / self.n() as f64)
    }

    /// `grad f(x) = (1/n) sum_i grad f_i(x)`.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, ProblemError> {
        self.check_point(x)?;
        let mut g = DVector::zeros(self.dim());
        for a in &self.agents {
            g += a.gradient(x);
        }
        Ok(g / self.n() as f64)
    }

    /// Upper estimate of the smoothness of the global objective `f`, never
    /// above [`Self::lipschitz`].
    pub fn global_smoothness(&self) -> f64 {
        let m = self.dim();
        let mut v = DVector::from_fn(m, |k, _| 1.0 + (k % 7) as f64 * 0.1);
        let mut estimate = 0.0;
        for _ in 0..300 {
            let mut hv = DVector::zeros(m);
            for a in &self.agents {
                hv += a.matrix.tr_mul(&(&a.matrix * &v));
            }
            hv /= self.n() as f64;
            let norm = hv.norm();
            if norm == 0.0 {
                break;
            }
            estimate = hv.dot(&v) / v.norm_squared();
            v = hv / norm;
        }
        (1.1 * estimate).clamp(f64::MIN_POSITIVE, self.lipschitz)
    }

    /// SHA-256 over the serialized instance, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("dualavg-problem v1\n");
        let _ = writeln!(out, "{} {}", self.n(), self.dim());
        let ps: Vec<String> = self.agents.iter().map(|a| a.matrix.nrows().to_string()).collect();
        let _ = writeln!(out, "{}", ps.join(" "));
        match self.constraint.kind {
            ConstraintKind::L1Ball { radius } => {
                let _ = writeln!(out, "{radius:?}");
            }
            ConstraintKind::Unconstrained => out.push_str("inf\n"),
        }
        for a in &self.agents {
            for r in 0..a.matrix.nrows() {
                for c in 0..a.matrix.ncols() {
                    let _ = write!(out, "{:?} ", a.matrix[(r, c)]);
                }
                let _ = writeln!(out, "{:?}", a.measurements[r]);
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ProblemError> {
        let mut tokens = text.lines().enumerate().flat_map(|(k, l)| {
            let body = l.split('#').next().unwrap_or("");
            body.split_whitespace().map(move |t| (k + 1, t))
        });
        let mut next = |what: &str| {
            tokens.next().ok_or_else(|| ProblemError::Parse { line: 0, msg: format!("unexpected end of input, expected {what}") })
        };
        let (line, magic) = next("header")?;
        let (_, version) = next("version")?;
        if magic != "dualavg-problem" || version != "v1" {
            return Err(ProblemError::Parse { line, msg: "missing `dualavg-problem v1` header".into() });
        }
        fn int(tok: (usize, &str)) -> Result<usize, ProblemError> {
            tok.1.parse().map_err(|e| ProblemError::Parse { line: tok.0, msg: format!("bad integer `{}`: {e}", tok.1) })
        }
        fn float(tok: (usize, &str)) -> Result<f64, ProblemError> {
            tok.1.parse().map_err(|e| ProblemError::Parse { line: tok.0, msg: format!("bad number `{}`: {e}", tok.1) })
        }
        let n = int(next("n")?)?;
        let m = int(next("m")?)?;
        if n == 0 || m == 0 {
            return Err(ProblemError::InvalidSize(format!("n = {n}, m = {m}")));
        }
        let ps = (0..n).map(|_| int(next("p_i")?)).collect::<Result<Vec<_>, _>>()?;
        let radius = float(next("radius")?)?;
        let constraint = if radius.is_infinite() && radius > 0.0 {
            ConstraintSet::unconstrained(m)
        } else {
            ConstraintSet::l1_ball(radius, m)?
        };
        let mut agents = Vec::with_capacity(n);
        for &p in &ps {
            let mut mat = DMatrix::zeros(p, m);
            let mut c = DVector::zeros(p);
            for r in 0..p {
                for col in 0..m {
                    mat[(r, col)] = float(next("matrix entry")?)?;
                }
                c[r] = float(next("measurement")?)?;
            }
            agents.push(AgentData::new(mat, c)?);
        }
        if let Some((line, tok)) = tokens.next() {
            return Err(ProblemError::Parse { line, msg: format!("trailing token `{tok}`") });
        }
        Self::new(agents, constraint)
    }

    pub fn save(&self, path: &Path) -> Result<(), ProblemError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ProblemError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Free-function forms matching the rest of the API.
pub fn grad_i(prob: &DecentralizedProblem, i: usize, x: &DVector<f64>) -> Result<DVector<f64>, ProblemError> {
    prob.grad_i(i, x)
}

pub fn objective(prob: &DecentralizedProblem, x: &DVector<f64>) -> Result<f64, ProblemError> {
    prob.objective(x)
}

pub fn smoothness_constant(prob: &DecentralizedProblem) -> f64 {
    prob.lipschitz()
}

/// Parameters of the synthetic LASSO generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub sparsity: usize,
    pub noise_sd: f64,
    #[serde(default = "default_radius_factor")]
    pub radius_factor: f64,
    #[serde(default = "default_true")]
    pub constrained: bool,
}

fn default_radius_factor() -> f64 {
    1.1
}

fn default_true() -> bool {
    true
}

impl SynthSpec {
    pub fn new(n: usize, m: usize, p: usize, sparsity: usize, noise_sd: f64) -> Self {
        Self { n, m, p, sparsity, noise_sd, radius_factor: 1.1, constrained: true }
    }
}

/// Gaussian sparse-recovery instance: `M_i` i.i.d. N(0,1), `x_g` with
/// `sparsity` N(0,1) nonzeros, `c_i = M_i x_g + noise`, `R = 1.1 ||x_g||_1`.
///
/// Draw order is fixed (all `M_i`, then the support, then the values, then
/// the noise), so a seed fully determines the instance.
pub fn synth_lasso(spec: &SynthSpec, seed: u64) -> Result<(DecentralizedProblem, DVector<f64>), ProblemError> {
    let SynthSpec { n, m, p, sparsity, noise_sd, radius_factor, constrained } = *spec;
    if n == 0 || m == 0 || p == 0 {
        return Err(ProblemError::InvalidSize(format!("n, m, p must be positive (got {n}, {m}, {p})")));
    }
    if sparsity == 0 || sparsity > m {
        return Err(ProblemError::InvalidSize(format!("sparsity {sparsity} must lie in 1..={m}")));
    }
    if !(noise_sd.is_finite() && noise_sd >= 0.0) || !(radius_factor.is_finite() && radius_factor > 0.0) {
        return Err(ProblemError::InvalidSize("noise_sd must be >= 0 and radius_factor > 0".into()));
    }
    let mut rng = seeded_rng(seed);
    let matrices: Vec<DMatrix<f64>> =
        (0..n).map(|_| DMatrix::from_fn(p, m, |_, _| rng.sample(StandardNormal))).collect();
    let mut support = sample(&mut rng, m, sparsity).into_vec();
    support.sort_unstable();
    let mut x_g = DVector::zeros(m);
    for k in support {
        x_g[k] = rng.sample(StandardNormal);
    }
    let mut agents = Vec::with_capacity(n);
    for mat in matrices {
        let clean = &mat * &x_g;
        let c = DVector::from_fn(p, |r, _| {
            let e: f64 = rng.sample(StandardNormal);
            clean[r] + noise_sd * e
        });
        agents.push(AgentData::new(mat, c)?);
    }
    let constraint = if constrained {
        ConstraintSet::l1_ball(radius_factor * x_g.lp_norm(1), m)?
    } else {
        ConstraintSet::unconstrained(m)
    };
    Ok((DecentralizedProblem::new(agents, constraint)?, x_g))
}

/// Certified high-accuracy solution used as ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    /// Optimality residual of `x_star` (see [`optimality_certificate`]).
    pub certificate: f64,
    pub tol: f64,
    pub iterations: usize,
}

impl ReferenceSolution {
    pub fn x_star(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x_star)
    }
}

const CERTIFICATE_SEED: u64 = 0x5eed_ce47;
const CERTIFICATE_SAMPLES: usize = 500;

/// Optimality residual of a point.
///
/// For the l1 ball this is `max_q <grad f(x), x - q>` over 500 seeded random
/// feasible `q` and the `2m` vertices `+-R e_u`; a linear function attains
/// its maximum over the ball at a vertex, so the value is the exact
/// linear-optimization gap and bounds `f(x) - f*`. For an unconstrained
/// instance it is `||grad f(x)||`.
pub fn optimality_certificate(prob: &DecentralizedProblem, x: &DVector<f64>) -> Result<f64, ProblemError> {
    let g = prob.gradient(x)?;
    let Some(radius) = prob.constraint().radius() else {
        return Ok(g.norm());
    };
    let gx = g.dot(x);
    let mut best = gx + radius * g.amax();
    let mut rng = seeded_rng(CERTIFICATE_SEED);
    for _ in 0..CERTIFICATE_SAMPLES {
        let q = random_l1_point(&mut rng, prob.dim(), radius);
        best = best.max(gx - g.dot(&q));
    }
    Ok(best)
}

/// A random point of the l1 ball of `radius`: random signs and exponential
/// weights scaled to a uniform fraction of the radius.
pub fn random_l1_point<R: Rng>(rng: &mut R, m: usize, radius: f64) -> DVector<f64> {
    let raw = DVector::from_fn(m, |_, _| {
        let u: f64 = rng.random::<f64>();
        let mag = -(1.0 - u).ln();
        if rng.random::<bool>() {
            mag
        } else {
            -mag
        }
    });
    let scale: f64 = rng.random::<f64>() * radius / raw.lp_norm(1).max(f64::MIN_POSITIVE);
    raw * scale
}

const ORACLE_MAX_ITERS: usize = 200_000;
const ORACLE_CHECK_EVERY: usize = 50;

/// `f(x) = x^T H x / 2 - b^T x + k` with `H = (1/n) sum M_i^T M_i`, `b = (1/n) sum M_i^T c_i`.
fn normal_equations(prob: &DecentralizedProblem) -> (DMatrix<f64>, DVector<f64>) {
    let m = prob.dim();
    let mut hessian = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for a in prob.agents() {
        hessian += a.matrix.tr_mul(&a.matrix);
        rhs += a.matrix.tr_mul(&a.measurements);
    }
    let n = prob.n() as f64;
    (hessian / n, rhs / n)
}

/// Minimizes the quadratic on the face of the l1 ball fixed by the support
/// and signs of `x`: free on the support when the ball is inactive, on the
/// hyperplane `sign(x)^T x = R` otherwise. Returns the projected candidate.
fn polish_on_face(
    hessian: &DMatrix<f64>,
    rhs: &DVector<f64>,
    x: &DVector<f64>,
    radius: f64,
) -> Option<DVector<f64>> {
    let scale = x.amax();
    let support: Vec<usize> = (0..x.len()).filter(|&k| x[k].abs() > 1e-9 * scale).collect();
    if support.is_empty() {
        return None;
    }
    let s = support.len();
    let on_boundary = x.lp_norm(1) >= radius * (1.0 - 1e-9);
    let size = if on_boundary { s + 1 } else { s };
    let mut kkt = DMatrix::zeros(size, size);
    let mut b = DVector::zeros(size);
    for (r, &i) in support.iter().enumerate() {
        for (c, &j) in support.iter().enumerate() {
            kkt[(r, c)] = hessian[(i, j)];
        }
        b[r] = rhs[i];
        if on_boundary {
            kkt[(r, s)] = x[i].signum();
            kkt[(s, r)] = x[i].signum();
        }
    }
    if on_boundary {
        b[s] = radius;
    }
    let sol = kkt.lu().solve(&b)?;
    let mut out = DVector::zeros(x.len());
    for (r, &i) in support.iter().enumerate() {
        out[i] = sol[r];
    }
    if out.iter().any(|v| !v.is_finite()) {
        return None;
    }
    l1_ball_project(&out, radius).ok()
}

/// Solves the instance to certificate `tol`.
///
/// Constrained instances run projected gradient with Nesterov momentum and
/// gradient-based restarts; every few hundred iterations the quadratic is
/// minimized exactly on the current face of the ball, which lands on the
/// optimum once the support is identified. Unconstrained instances solve the
/// normal equations.
pub fn reference_optimum(prob: &DecentralizedProblem, tol: f64) -> Result<ReferenceSolution, ProblemError> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(ProblemError::InvalidSize(format!("tolerance must be positive, got {tol}")));
    }
    let Some(radius) = prob.constraint().radius() else {
        return unconstrained_optimum(prob, tol);
    };
    let (hessian, rhs) = normal_equations(prob);
    let step = 1.0 / prob.global_smoothness();
    let grad = |x: &DVector<f64>| &hessian * x - &rhs;
    let mut x = DVector::zeros(prob.dim());
    let mut x_prev = x.clone();
    let mut momentum_k = 0usize;
    let mut best = x.clone();
    let mut best_f = prob.objective(&best)?;
    let mut gap = optimality_certificate(prob, &best)?;
    let mut iterations = 0;
    while gap > tol && iterations < ORACLE_MAX_ITERS {
        iterations += 1;
        let mom = if momentum_k == 0 { 0.0 } else { (momentum_k as f64 - 1.0) / (momentum_k as f64 + 2.0) };
        let y = &x + (&x - &x_prev) * mom;
        let next = l1_ball_project(&(&y - grad(&y) * step), radius)?;
        // Restart when the momentum direction opposes the gradient mapping.
        if (&y - &next).dot(&(&next - &x)) > 0.0 {
            momentum_k = 0;
        } else {
            momentum_k += 1;
        }
        x_prev = std::mem::replace(&mut x, next);
        if iterations % ORACLE_CHECK_EVERY == 0 {
            let mut candidates = vec![x.clone()];
            if iterations % (4 * ORACLE_CHECK_EVERY) == 0 {
                candidates.extend(polish_on_face(&hessian, &rhs, &x, radius));
            }
            for c in candidates {
                let f = prob.objective(&c)?;
                if f <= best_f {
                    best_f = f;
                    best = c;
                }
            }
            gap = optimality_certificate(prob, &best)?;
        }
    }
    if gap > tol {
        return Err(ProblemError::OracleFailed { gap, tol, iterations });
    }
    Ok(ReferenceSolution { f_star: best_f, x_star: best.as_slice().to_vec(), certificate: gap, tol, iterations })
}

fn unconstrained_optimum(prob: &DecentralizedProblem, tol: f64) -> Result<ReferenceSolution, ProblemError> {
    let (hessian, rhs) = normal_equations(prob);
    let x = hessian.cholesky().map(|c| c.solve(&rhs)).ok_or(ProblemError::OracleFailed {
        gap: f64::INFINITY,
        tol,
        iterations: 0,
    })?;
    let certificate = optimality_certificate(prob, &x)?;
    if certificate > tol {
        return Err(ProblemError::OracleFailed { gap: certificate, tol, iterations: 1 });
    }
    Ok(ReferenceSolution {
        f_star: prob.objective(&x)?,
        x_star: x.as_slice().to_vec(),
        certificate,
        tol,
        iterations: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn single(m: DMatrix<f64>, c: DVector<f64>, constraint: ConstraintSet) -> DecentralizedProblem {
        DecentralizedProblem::new(vec![AgentData::new(m, c).unwrap()], constraint).unwrap()
    }

    fn central_difference(a: &AgentData, x: &DVector<f64>, k: usize, h: f64) -> f64 {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        (a.value(&xp) - a.value(&xm)) / (2.0 * h)
    }

    #[test]
    fn gradient_examples() {
        let prob = single(DMatrix::identity(2, 2), dvector![1.0, 2.0], ConstraintSet::unconstrained(2));
        assert_eq!(prob.grad_i(0, &dvector![0.0, 0.0]).unwrap(), dvector![-1.0, -2.0]);
        assert!(matches!(prob.grad_i(1, &dvector![0.0, 0.0]), Err(ProblemError::AgentOutOfRange { index: 1, n: 1 })));
        assert!(matches!(prob.grad_i(0, &dvector![0.0]), Err(ProblemError::DimensionMismatch { .. })));
    }

    #[test]
    fn gradient_vanishes_at_least_squares_solution() {
        let (prob, _) = synth_lasso(&SynthSpec::new(3, 4, 8, 2, 0.3), 11).unwrap();
        for (i, a) in prob.agents().iter().enumerate() {
            let ls = a.matrix.tr_mul(&a.matrix).cholesky().unwrap().solve(&a.matrix.tr_mul(&a.measurements));
            assert!(prob.grad_i(i, &ls).unwrap().amax() < 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (prob, _) = synth_lasso(&SynthSpec::new(4, 6, 5, 3, 0.1), 5).unwrap();
        let mut rng = seeded_rng(99);
        for _ in 0..20 {
            let x = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
            for (i, a) in prob.agents().iter().enumerate() {
                let g = prob.grad_i(i, &x).unwrap();
                for k in 0..6 {
                    let fd = central_difference(a, &x, k, 1e-5);
                    assert!((fd - g[k]).abs() <= 1e-5 * (1.0 + g[k].abs()), "agent {i} coord {k}");
                }
            }
        }
    }

    #[test]
    fn objective_examples() {
        let prob = single(DMatrix::identity(2, 2), dvector![0.0, 0.0], ConstraintSet::unconstrained(2));
        assert_eq!(prob.objective(&dvector![3.0, 4.0]).unwrap(), 12.5);
        let (noiseless, x_g) = synth_lasso(&SynthSpec::new(2, 4, 3, 1, 0.0), 1).unwrap();
        assert_eq!(noiseless.objective(&x_g).unwrap(), 0.0);
    }

    #[test]
    fn objective_is_convex_along_segments() {
        let (prob, _) = synth_lasso(&SynthSpec::new(3, 5, 4, 2, 0.2), 8).unwrap();
        let r = prob.constraint().radius().unwrap();
        let mut rng = seeded_rng(3);
        for _ in 0..100 {
            let x = random_l1_point(&mut rng, 5, r);
            let y = random_l1_point(&mut rng, 5, r);
            let mid = (&x + &y) * 0.5;
            let lhs = prob.objective(&mid).unwrap();
            let rhs = 0.5 * (prob.objective(&x).unwrap() + prob.objective(&y).unwrap());
            assert!(lhs <= rhs + 1e-12);
        }
    }

    #[test]
    fn smoothness_examples() {
        let diag = DMatrix::from_diagonal(&dvector![2.0, 1.0]);
        let prob = single(diag, dvector![0.0, 0.0], ConstraintSet::unconstrained(2));
        assert!((prob.lipschitz() - 4.0).abs() < 1e-12);
        let zero = AgentData::new(DMatrix::zeros(2, 2), dvector![1.0, 1.0]).unwrap();
        assert!(matches!(
            DecentralizedProblem::new(vec![zero], ConstraintSet::unconstrained(2)),
            Err(ProblemError::DegenerateSmoothness)
        ));
    }

    #[test]
    fn smoothness_bounds_gradient_variation() {
        let (prob, _) = synth_lasso(&SynthSpec::new(3, 7, 5, 3, 0.1), 21).unwrap();
        let l = prob.lipschitz();
        let r = prob.constraint().radius().unwrap();
        let mut rng = seeded_rng(4);
        for _ in 0..1000 {
            let x = random_l1_point(&mut rng, 7, r);
            let y = random_l1_point(&mut rng, 7, r);
            for i in 0..prob.n() {
                let dg = (prob.grad_i(i, &x).unwrap() - prob.grad_i(i, &y).unwrap()).norm();
                assert!(dg <= l * (&x - &y).norm() * (1.0 + 1e-12) + 1e-12);
                // Convexity and the quadratic upper bound.
                let gap = prob.local_objective(i, &x).unwrap()
                    - prob.local_objective(i, &y).unwrap()
                    - prob.grad_i(i, &y).unwrap().dot(&(&x - &y));
                assert!(gap >= -1e-9 && gap <= 0.5 * l * (&x - &y).norm_squared() + 1e-9);
            }
        }
        assert!(prob.global_smoothness() <= l);
    }

    #[test]
    fn synth_is_deterministic_and_shaped() {
        let spec = SynthSpec::new(3, 10, 4, 3, 0.1);
        let (a, xa) = synth_lasso(&spec, 42).unwrap();
        let (b, xb) = synth_lasso(&spec, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(xa, xb);
        assert_eq!(a.content_hash(), b.content_hash());
        let (c, _) = synth_lasso(&spec, 43).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
        assert_eq!(xa.iter().filter(|v| **v != 0.0).count(), 3);
        assert!((a.constraint().radius().unwrap() - 1.1 * xa.lp_norm(1)).abs() < 1e-12);
        assert!(synth_lasso(&SynthSpec::new(3, 10, 4, 11, 0.1), 1).is_err());
        assert!(synth_lasso(&SynthSpec::new(0, 10, 4, 1, 0.1), 1).is_err());
    }

    #[test]
    fn text_format_round_trip() {
        let (prob, _) = synth_lasso(&SynthSpec::new(2, 3, 2, 1, 0.5), 9).unwrap();
        let text = prob.to_text();
        let back = DecentralizedProblem::from_text(&text).unwrap();
        assert_eq!(back, prob);
        let mut free = SynthSpec::new(2, 3, 2, 1, 0.5);
        free.constrained = false;
        let (prob, _) = synth_lasso(&free, 9).unwrap();
        assert_eq!(DecentralizedProblem::from_text(&prob.to_text()).unwrap(), prob);
        assert!(matches!(DecentralizedProblem::from_text("nope"), Err(ProblemError::Parse { .. })));
        let lines: Vec<&str> = text.lines().collect();
        let truncated = lines[..lines.len() - 1].join("\n");
        assert!(DecentralizedProblem::from_text(&truncated).is_err());
    }

    #[test]
    fn reference_one_dimensional() {
        // f = (x - 2)^2 / 2 over [-1, 1].
        let prob = single(DMatrix::from_element(1, 1, 1.0), dvector![2.0], ConstraintSet::l1_ball(1.0, 1).unwrap());
        let sol = reference_optimum(&prob, 1e-10).unwrap();
        assert!((sol.x_star[0] - 1.0).abs() < 1e-9);
        assert!((sol.f_star - 0.5).abs() < 1e-9);
        assert!(sol.certificate <= 1e-10);
        assert!(reference_optimum(&prob, 0.0).is_err());
    }

    #[test]
    fn reference_noiseless_interpolates() {
        let (prob, _) = synth_lasso(&SynthSpec::new(2, 4, 3, 1, 0.0), 1).unwrap();
        let sol = reference_optimum(&prob, 1e-10).unwrap();
        assert!(sol.f_star.abs() < 1e-9);
        assert!(optimality_certificate(&prob, &sol.x_star()).unwrap() <= sol.tol);
    }

    #[test]
    fn reference_matches_grid_search() {
        let (prob, _) = synth_lasso(&SynthSpec::new(2, 3, 3, 2, 0.5), 17).unwrap();
        let r = prob.constraint().radius().unwrap();
        let sol = reference_optimum(&prob, 1e-10).unwrap();
        // Exhaustive grid over the ball; every grid point is feasible, so the
        // grid minimum is an upper bound and a fine grid gets within 1e-4.
        let k = 160;
        let mut best = f64::INFINITY;
        let mut best_x = DVector::zeros(3);
        for i in -k..=k {
            for j in -k..=k {
                let (x, y) = (r * i as f64 / k as f64, r * j as f64 / k as f64);
                let rest = r - x.abs() - y.abs();
                if rest < 0.0 {
                    continue;
                }
                for s in -k..=k {
                    let z = r * s as f64 / k as f64;
                    if z.abs() > rest {
                        continue;
                    }
                    let p = dvector![x, y, z];
                    let f = prob.objective(&p).unwrap();
                    if f < best {
                        best = f;
                        best_x = p;
                    }
                }
            }
        }
        // Local refinement of the grid winner on a finer grid around it.
        let h = r / k as f64;
        let fine = 40;
        let mut refined = best;
        for i in -fine..=fine {
            for j in -fine..=fine {
                for s in -fine..=fine {
                    let p = &best_x + dvector![i as f64, j as f64, s as f64] * (h / fine as f64);
                    if p.lp_norm(1) <= r {
                        refined = refined.min(prob.objective(&p).unwrap());
                    }
                }
            }
        }
        assert!(sol.f_star <= refined + 1e-12);
        assert!((sol.f_star - refined).abs() < 1e-4, "oracle {} grid {}", sol.f_star, refined);
    }

    #[test]
    fn reference_unconstrained_solves_normal_equations() {
        let mut spec = SynthSpec::new(3, 5, 4, 2, 0.1);
        spec.constrained = false;
        let (prob, _) = synth_lasso(&spec, 2).unwrap();
        let sol = reference_optimum(&prob, 1e-8).unwrap();
        assert!(prob.gradient(&sol.x_star()).unwrap().norm() <= 1e-8);
    }

    #[test]
    fn certificate_is_reverifiable() {
        let (prob, _) = synth_lasso(&SynthSpec::new(4, 8, 6, 3, 0.1), 13).unwrap();
        let sol = reference_optimum(&prob, 1e-10).unwrap();
        let again = optimality_certificate(&prob, &sol.x_star()).unwrap();
        assert_eq!(again, sol.certificate);
        assert!(again <= 1e-10);
        assert!(prob.constraint().contains(&sol.x_star(), 1e-12));
    }
}
