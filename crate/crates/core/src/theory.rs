//! Step-size admissibility and the constants of the DDA and ADDA rate bounds.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::MixingMatrix;
use crate::problem::{DecentralizedProblem, ProblemError};
use crate::prox::ProxSetup;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),
    #[error("step {a} violates the DDA step condition (gamma = {gamma}, rho(M) = {rho})")]
    ConditionViolated { a: f64, gamma: f64, rho: f64 },
    #[error("the ADDA constants need a bounded constraint set")]
    Unbounded,
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

fn check_params(a: f64, l: f64, beta: f64) -> Result<(), TheoryError> {
    if !(a.is_finite() && a > 0.0) {
        return Err(TheoryError::ParameterOutOfRange(format!("a = {a} must be positive")));
    }
    if !(l.is_finite() && l > 0.0) {
        return Err(TheoryError::ParameterOutOfRange(format!("L = {l} must be positive")));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(TheoryError::ParameterOutOfRange(format!("beta = {beta} must lie in [0, 1)")));
    }
    Ok(())
}

/// The 2x2 matrix `[[b, b], [aL(b+1), b(aL+1)]]` that propagates the dual
/// and gradient-tracking consensus errors of DDA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusMatrix {
    pub a: f64,
    pub lipschitz: f64,
    pub beta: f64,
}

impl ConsensusMatrix {
    pub fn new(a: f64, lipschitz: f64, beta: f64) -> Result<Self, TheoryError> {
        check_params(a, lipschitz, beta)?;
        Ok(Self { a, lipschitz, beta })
    }

    pub fn entries(&self) -> [[f64; 2]; 2] {
        let (b, al) = (self.beta, self.a * self.lipschitz);
        [[b, b], [al * (b + 1.0), b * (al + 1.0)]]
    }

    /// `(xi_1, xi_2)` with `xi_1 = b(2 + aL)` and `xi_2 = sqrt(a^2 b^2 L^2 + 4aLb(b+1))`.
    pub fn xi(&self) -> (f64, f64) {
        let (b, al) = (self.beta, self.a * self.lipschitz);
        (b * (2.0 + al), (al * al * b * b + 4.0 * al * b * (b + 1.0)).sqrt())
    }

    /// Both (real) eigenvalues, larger first.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let (x1, x2) = self.xi();
        ((x1 + x2) / 2.0, (x1 - x2) / 2.0)
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues().0
    }
}

/// `rho(M) = (xi_1 + xi_2) / 2`.
pub fn rho_m(a: f64, lipschitz: f64, beta: f64) -> Result<f64, TheoryError> {
    Ok(ConsensusMatrix::new(a, lipschitz, beta)?.spectral_radius())
}

/// Which DDA step condition to test: the constrained theorem (`8/9`) or the
/// unconstrained corollary (`8/3`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DdaCondition {
    Constrained,
    Unconstrained,
}

impl DdaCondition {
    fn coefficient(self) -> f64 {
        match self {
            Self::Constrained => 8.0 / 9.0,
            Self::Unconstrained => 8.0 / 3.0,
        }
    }
}

/// `1/a - 2L max{b/(1-b)^2, 1 + k/(1 - rho(M)^2)}`; `-inf` once `rho(M) >= 1`.
pub fn dda_slack(a: f64, lipschitz: f64, beta: f64, condition: DdaCondition) -> Result<f64, TheoryError> {
    let rho = rho_m(a, lipschitz, beta)?;
    if rho >= 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let network = beta / (1.0 - beta).powi(2);
    let tracking = 1.0 + condition.coefficient() / (1.0 - rho * rho);
    Ok(1.0 / a - 2.0 * lipschitz * network.max(tracking))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdaAdmissibility {
    /// Verdict of the exact (implicit in `a`) condition.
    pub admissible: bool,
    /// Slack of the exact condition; positive iff admissible.
    pub margin: f64,
    pub rho: f64,
    /// Supremum of steps passing the beta-only sufficient condition, when it applies.
    pub explicit_bound: Option<f64>,
    pub explicit_admissible: bool,
    /// `(1 - beta)^2 / L`, the order of the admissible step.
    pub scale: f64,
}

pub fn dda_stepsize_admissible(a: f64, lipschitz: f64, beta: f64) -> Result<DdaAdmissibility, TheoryError> {
    let margin = dda_slack(a, lipschitz, beta, DdaCondition::Constrained)?;
    let explicit_bound = explicit_dda_bound(lipschitz, beta)?;
    Ok(DdaAdmissibility {
        admissible: margin > 0.0,
        margin,
        rho: rho_m(a, lipschitz, beta)?,
        explicit_bound,
        explicit_admissible: explicit_bound.is_some_and(|bound| a < bound),
        scale: (1.0 - beta).powi(2) / lipschitz,
    })
}

/// Supremum of `a` under the beta-only sufficient condition
/// `1/a > 2L max{b/(1-b)^2, 1 + 1/(1 - r^2)}`, `r = (2.5b + sqrt(2.25b^2 + 2b)) / 2`.
///
/// `r` is `rho(M)` at `a = 1/(2L)`; once `r >= 1` (`beta >= (3 - sqrt 5)/2`)
/// the condition is vacuous and `None` is returned.
pub fn explicit_dda_bound(lipschitz: f64, beta: f64) -> Result<Option<f64>, TheoryError> {
    check_params(1.0, lipschitz, beta)?;
    let r = (2.5 * beta + (2.25 * beta * beta + 2.0 * beta).sqrt()) / 2.0;
    if r >= 1.0 {
        return Ok(None);
    }
    let network = beta / (1.0 - beta).powi(2);
    let tracking = 1.0 + 1.0 / (1.0 - r * r);
    Ok(Some(1.0 / (2.0 * lipschitz * network.max(tracking))))
}

/// Supremum of admissible steps under the exact condition, by bisection on
/// `(0, 1/(2L(1 + k))]` to relative width `1e-12`.
pub fn dda_max_stepsize(lipschitz: f64, beta: f64, condition: DdaCondition) -> Result<f64, TheoryError> {
    check_params(1.0, lipschitz, beta)?;
    let mut hi = 1.0 / (2.0 * lipschitz * (1.0 + condition.coefficient()));
    if dda_slack(hi, lipschitz, beta, condition)? > 0.0 {
        return Ok(hi);
    }
    let mut lo = 0.0;
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if dda_slack(mid, lipschitz, beta, condition)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Safety factor applied to step bounds when a run asks for `auto`.
pub const AUTO_SAFETY: f64 = 0.99;

/// Automatic DDA step: `0.99 x` the explicit bound, or `0.99 x` the exact
/// supremum when the explicit bound does not apply.
pub fn auto_dda_step(lipschitz: f64, beta: f64, condition: DdaCondition) -> Result<f64, TheoryError> {
    let bound = match (condition, explicit_dda_bound(lipschitz, beta)?) {
        (DdaCondition::Constrained, Some(b)) => b,
        _ => dda_max_stepsize(lipschitz, beta, condition)?,
    };
    Ok(AUTO_SAFETY * bound)
}

/// `a <= 1/(6L)`; a non-positive step is rejected as an error.
pub fn adda_stepsize_admissible(a: f64, lipschitz: f64) -> Result<bool, TheoryError> {
    check_params(a, lipschitz, 0.0)?;
    Ok(a <= adda_max_stepsize(lipschitz))
}

pub fn adda_max_stepsize(lipschitz: f64) -> f64 {
    1.0 / (6.0 * lipschitz)
}

/// `(a_t, A_t) = (a(t+1), a t(t+3)/2)` for `t >= 1`; `(0, 0)` at `t = 0`.
pub fn adda_weights(a: f64, t: usize) -> (f64, f64) {
    let t = t as f64;
    if t == 0.0 {
        return (0.0, 0.0);
    }
    (a * (t + 1.0), a * t * (t + 3.0) / 2.0)
}

/// `gamma = 1/2 - aL - 8aL / (9(1 - rho^2))`.
pub fn gamma_coefficient(a: f64, lipschitz: f64, rho: f64) -> f64 {
    let al = a * lipschitz;
    0.5 - al - 8.0 * al / (9.0 * (1.0 - rho * rho))
}

/// `pi^2 = sum_i ||grad f_i(x0) - mean_j grad f_j(x0)||^2`.
pub fn gradient_dissimilarity(prob: &DecentralizedProblem, x0: &DVector<f64>) -> Result<f64, TheoryError> {
    let grads = (0..prob.n()).map(|i| prob.grad_i(i, x0)).collect::<Result<Vec<_>, _>>()?;
    Ok(gradient_spread(&grads))
}

/// `sum_i ||g_i - mean(g)||^2`.
pub fn gradient_spread(grads: &[DVector<f64>]) -> f64 {
    let avg = crate::solvers::mean(grads);
    grads.iter().map(|g| (g - &avg).norm_squared()).sum()
}

/// `ceil(3 / (1 - beta))`.
pub fn block_length(beta: f64) -> f64 {
    (3.0 / (1.0 - beta)).ceil()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdaConstants {
    pub rho: f64,
    pub gamma: f64,
    pub c: f64,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AddaConstants {
    pub c_p: f64,
    pub c_g: f64,
}

/// `C_p = ceil(3/(1-b)) sqrt(n) G`, `C_g = 2L ceil(3/(1-b)) (sqrt(n) G + C_p) / (1-b)`.
pub fn adda_constants(n: usize, beta: f64, diameter: f64, lipschitz: f64) -> AddaConstants {
    let blocks = block_length(beta);
    let root_n = (n as f64).sqrt();
    let c_p = blocks * root_n * diameter;
    let c_g = 2.0 * lipschitz * blocks * (root_n * diameter + c_p) / (1.0 - beta);
    AddaConstants { c_p, c_g }
}

/// Every constant the rate bounds consume, for one step `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremConstants {
    pub n: usize,
    pub a: f64,
    pub lipschitz: f64,
    pub beta: f64,
    pub pi_sq: f64,
    /// `d(x*)`.
    pub d_x_star: f64,
    /// Euclidean diameter `G` of the constraint set, when bounded.
    pub diameter: Option<f64>,
    pub dda: Option<DdaConstants>,
    pub adda: Option<AddaConstants>,
}

impl TheoremConstants {
    /// DDA objective bound `C / (a t)` on the running average of `y`.
    pub fn dda_objective_bound(&self, t: usize) -> Option<f64> {
        self.dda.map(|k| k.c / (self.a * t as f64))
    }

    /// DDA primal consensus bound `D / t`.
    pub fn dda_consensus_bound(&self, t: usize) -> Option<f64> {
        self.dda.map(|k| k.d / t as f64)
    }

    /// Right-hand side of the ADDA objective bound before dividing by `A_t`:
    /// `d(x*) + t (2G(L C_p + C_g)/sqrt(n) + 6 L C_p^2 / n)`.
    pub fn adda_scaled_bound(&self, t: usize) -> Option<f64> {
        Some(self.d_x_star + t as f64 * self.adda_per_round()?)
    }

    /// `2G(L C_p + C_g)/sqrt(n) + 6 L C_p^2 / n`.
    pub fn adda_per_round(&self) -> Option<f64> {
        let (k, g) = (self.adda?, self.diameter?);
        let n = self.n as f64;
        Some(2.0 * g * (self.lipschitz * k.c_p + k.c_g) / n.sqrt() + 6.0 * self.lipschitz * k.c_p * k.c_p / n)
    }

    pub fn adda_objective_bound(&self, t: usize) -> Option<f64> {
        let (_, big_a) = adda_weights(self.a, t);
        self.adda_scaled_bound(t).map(|b| b / big_a)
    }

    /// Lemma bound `(a_t / A_t) C_p` on `||v - 1 (x) v_bar||` and `||u - 1 (x) u_bar||`.
    pub fn adda_primal_consensus_bound(&self, t: usize) -> Option<f64> {
        let (a_t, big_a) = adda_weights(self.a, t);
        self.adda.map(|k| a_t / big_a * k.c_p)
    }
}

fn base_constants(
    prob: &DecentralizedProblem,
    mixing: &MixingMatrix,
    prox: &ProxSetup,
    a: f64,
    x_star: &DVector<f64>,
) -> Result<TheoremConstants, TheoryError> {
    check_params(a, prob.lipschitz(), mixing.beta())?;
    let diameter = prob.constraint().diameter();
    Ok(TheoremConstants {
        n: prob.n(),
        a,
        lipschitz: prob.lipschitz(),
        beta: mixing.beta(),
        pi_sq: gradient_dissimilarity(prob, prox.center())?,
        d_x_star: prox.distance(x_star),
        diameter,
        dda: None,
        adda: diameter.map(|g| adda_constants(prob.n(), mixing.beta(), g, prob.lipschitz())),
    })
}

/// DDA and (for bounded sets) ADDA constants at step `a`.
///
/// Fails with [`TheoryError::ConditionViolated`] when `gamma <= 0` or
/// `rho(M) >= 1`, i.e. when `a` breaks the DDA step condition.
pub fn compute_constants(
    prob: &DecentralizedProblem,
    mixing: &MixingMatrix,
    prox: &ProxSetup,
    a: f64,
    x_star: &DVector<f64>,
) -> Result<TheoremConstants, TheoryError> {
    let mut k = base_constants(prob, mixing, prox, a, x_star)?;
    let l = k.lipschitz;
    let rho = rho_m(a, l, k.beta)?;
    let gamma = gamma_coefficient(a, l, rho);
    if rho >= 1.0 || gamma <= 0.0 {
        return Err(TheoryError::ConditionViolated { a, gamma, rho });
    }
    let n = k.n as f64;
    let contraction = 1.0 - rho * rho;
    let c = k.d_x_star + 8.0 * a * k.pi_sq / (9.0 * n * l * contraction);
    let d = 8.0 * n * c / (9.0 * gamma * (1.0 - rho).powi(2)) + 8.0 * k.pi_sq / (9.0 * l * l * contraction);
    k.dda = Some(DdaConstants { rho, gamma, c, d });
    Ok(k)
}

/// ADDA constants only; needs a bounded constraint set.
pub fn compute_adda_constants(
    prob: &DecentralizedProblem,
    mixing: &MixingMatrix,
    prox: &ProxSetup,
    a: f64,
    x_star: &DVector<f64>,
) -> Result<TheoremConstants, TheoryError> {
    let k = base_constants(prob, mixing, prox, a, x_star)?;
    if k.adda.is_none() {
        return Err(TheoryError::Unbounded);
    }
    Ok(k)
}

/// Right-hand side of the unconstrained DDA bound on `f(x_tilde_i) - f*`:
/// `(n ||x*||^2 / (2a) + 8 pi^2 / (3L(1 - rho^2))) / t`, with `d = ||x||^2/2`.
pub fn unconstrained_dda_bound(k: &TheoremConstants, x_star: &DVector<f64>, t: usize) -> Result<f64, TheoryError> {
    let rho = rho_m(k.a, k.lipschitz, k.beta)?;
    if rho >= 1.0 {
        return Err(TheoryError::ConditionViolated { a: k.a, gamma: f64::NAN, rho });
    }
    let n = k.n as f64;
    let head = n * x_star.norm_squared() / (2.0 * k.a);
    let tail = 8.0 * k.pi_sq / (3.0 * k.lipschitz * (1.0 - rho * rho));
    Ok((head + tail) / t as f64)
}
