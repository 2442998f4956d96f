//! Per-round transition functions for the decentralized methods and their
//! centralized counterparts.
//!
//! Every state type exposes `init` and a pure `step(&self, ..) -> Result<Self>`;
//! the free `*_round` functions are thin wrappers with the same contract.
//! Reductions over agents (means, deviation norms) always run in ascending
//! agent order.

pub mod adda;
pub mod apm;
pub mod centralized;
pub mod classic_dda;
pub mod dda;
pub mod pg_extra;

use nalgebra::DVector;
use thiserror::Error;

use crate::graph::MixingMatrix;
use crate::problem::{DecentralizedProblem, ProblemError};
use crate::prox::{ProxError, ProxSetup};

pub use adda::{adda_round, AddaState};
pub use apm::{apm_round, ApmState};
pub use centralized::{centralized_ada_run, centralized_da_run, AdaState, DaState};
pub use classic_dda::{classic_dda_round, ClassicDdaState, StepSchedule};
pub use dda::{dda_round, DdaState};
pub use pg_extra::{pg_extra_round, PgExtraState};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("diverged at round {round}: {reason}")]
    Diverged { round: usize, reason: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("network has {mixing} agents but the problem has {problem}")]
    AgentCountMismatch { mixing: usize, problem: usize },
    #[error(transparent)]
    Prox(#[from] ProxError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Everything a decentralized round reads but never mutates.
#[derive(Debug, Clone, Copy)]
pub struct Network<'a> {
    pub problem: &'a DecentralizedProblem,
    pub mixing: &'a MixingMatrix,
    pub prox: &'a ProxSetup,
}

impl<'a> Network<'a> {
    pub fn new(
        problem: &'a DecentralizedProblem,
        mixing: &'a MixingMatrix,
        prox: &'a ProxSetup,
    ) -> Result<Self, SolverError> {
        if mixing.n() != problem.n() {
            return Err(SolverError::AgentCountMismatch { mixing: mixing.n(), problem: problem.n() });
        }
        if prox.dim() != problem.dim() {
            return Err(ProxError::DimensionMismatch { expected: problem.dim(), got: prox.dim() }.into());
        }
        Ok(Self { problem, mixing, prox })
    }

    pub fn n(&self) -> usize {
        self.problem.n()
    }

    /// `grad f_i(x_i)` for every agent.
    pub(crate) fn local_gradients(&self, xs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>, SolverError> {
        xs.iter().enumerate().map(|(i, x)| Ok(self.problem.grad_i(i, x)?)).collect()
    }
}

pub(crate) fn require_positive(name: &str, value: f64) -> Result<(), SolverError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(SolverError::InvalidParameter(format!("{name} must be positive and finite, got {value}")))
    }
}

/// Fails with [`SolverError::Diverged`] if any coordinate is non-finite.
pub(crate) fn ensure_finite(round: usize, what: &str, xs: &[DVector<f64>]) -> Result<(), SolverError> {
    for (i, x) in xs.iter().enumerate() {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::Diverged { round, reason: format!("non-finite {what} at agent {}", i + 1) });
        }
    }
    Ok(())
}

/// Maps a conjugate-map failure on a blown-up dual variable to divergence.
pub(crate) fn conjugate(round: usize, prox: &ProxSetup, g: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
    match prox.conjugate_map(g) {
        Err(ProxError::NonFinite) => {
            Err(SolverError::Diverged { round, reason: "non-finite dual variable".into() })
        }
        other => Ok(other?),
    }
}

/// Projection onto the constraint set, with non-finite input reported as divergence.
pub(crate) fn project(round: usize, prox: &ProxSetup, v: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
    match prox.constraint().project(v) {
        Err(ProxError::NonFinite) => Err(SolverError::Diverged { round, reason: "non-finite iterate".into() }),
        other => Ok(other?),
    }
}

/// Network average `(1/n) sum_i x_i`.
pub fn mean(xs: &[DVector<f64>]) -> DVector<f64> {
    let mut acc = xs[0].clone();
    for x in &xs[1..] {
        acc += x;
    }
    acc / xs.len() as f64
}

/// `||x - 1 (x) mean(x)||`, the stacked deviation from the network average.
pub fn deviation_norm(xs: &[DVector<f64>]) -> f64 {
    let avg = mean(xs);
    xs.iter().map(|x| (x - &avg).norm_squared()).sum::<f64>().sqrt()
}

/// `sqrt(sum_i ||x_i - target||^2)`.
pub fn distance_to(xs: &[DVector<f64>], target: &DVector<f64>) -> f64 {
    xs.iter().map(|x| (x - target).norm_squared()).sum::<f64>().sqrt()
}
