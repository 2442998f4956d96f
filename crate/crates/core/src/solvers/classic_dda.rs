//! Classic decentralized dual averaging: the dual variable mixes and then
//! absorbs the local gradient, with a decaying step.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{conjugate, ensure_finite, require_positive, Network, SolverError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "a", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant(f64),
    /// `a_t = a / sqrt(t)`.
    InverseSqrt(f64),
}

impl StepSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            Self::Constant(a) => a,
            Self::InverseSqrt(a) => a / (t.max(1) as f64).sqrt(),
        }
    }

    pub fn base(&self) -> f64 {
        match *self {
            Self::Constant(a) | Self::InverseSqrt(a) => a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicDdaState {
    t: usize,
    x: Vec<DVector<f64>>,
    z: Vec<DVector<f64>>,
}

impl ClassicDdaState {
    pub fn init(net: &Network<'_>) -> Self {
        let x0 = net.prox.center();
        Self { t: 0, x: vec![x0.clone(); net.n()], z: vec![DVector::zeros(x0.len()); net.n()] }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn x(&self) -> &[DVector<f64>] {
        &self.x
    }

    pub fn z(&self) -> &[DVector<f64>] {
        &self.z
    }

    pub fn step(&self, net: &Network<'_>, schedule: StepSchedule) -> Result<Self, SolverError> {
        require_positive("a", schedule.base())?;
        let t = self.t + 1;
        let a_t = schedule.at(t);
        let grads = net.local_gradients(&self.x)?;
        let mut z = net.mixing.mix(&self.z);
        for (zi, g) in z.iter_mut().zip(&grads) {
            *zi += g;
        }
        ensure_finite(t, "dual variable", &z)?;
        let x = z.iter().map(|zi| conjugate(t, net.prox, &(zi * -a_t))).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { t, x, z })
    }
}

pub fn classic_dda_round(
    state: &ClassicDdaState,
    net: &Network<'_>,
    schedule: StepSchedule,
) -> Result<ClassicDdaState, SolverError> {
    state.step(net, schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_topology, metropolis_weights, MixingMatrix, TopologyKind};
    use crate::problem::{synth_lasso, SynthSpec};
    use crate::prox::make_prox;
    use crate::solvers::{centralized_da_run, deviation_norm};

    #[test]
    fn schedule_values() {
        assert_eq!(StepSchedule::InverseSqrt(2.0).at(4), 1.0);
        assert_eq!(StepSchedule::Constant(2.0).at(9), 2.0);
    }

    #[test]
    fn single_agent_constant_step_matches_centralized() {
        let (prob, _) = synth_lasso(&SynthSpec::new(1, 10, 8, 3, 0.1), 5).unwrap();
        let mixing = MixingMatrix::uniform(1).unwrap();
        let prox = make_prox(DVector::zeros(10), *prob.constraint()).unwrap();
        let net = Network::new(&prob, &mixing, &prox).unwrap();
        let a = 0.2 / prob.lipschitz();
        let da = centralized_da_run(&prob, &prox, a, 50).unwrap();
        let mut state = ClassicDdaState::init(&net);
        for x in &da[1..] {
            state = state.step(&net, StepSchedule::Constant(a)).unwrap();
            assert!((&state.x()[0] - x).amax() <= 1e-12);
        }
    }

    #[test]
    fn dual_disagreement_persists_on_cycle() {
        let (prob, _) = synth_lasso(&SynthSpec::new(4, 8, 6, 3, 0.1), 3).unwrap();
        let mixing = metropolis_weights(&build_topology(TopologyKind::Cycle, 4, None).unwrap()).unwrap();
        let prox = make_prox(DVector::zeros(8), *prob.constraint()).unwrap();
        let net = Network::new(&prob, &mixing, &prox).unwrap();
        let mut state = ClassicDdaState::init(&net);
        let mut late = Vec::new();
        for t in 1..=400 {
            state = state.step(&net, StepSchedule::InverseSqrt(0.1 / prob.lipschitz())).unwrap();
            for x in state.x() {
                assert!(prob.constraint().contains(x, 1e-9));
            }
            if t > 300 {
                late.push(deviation_norm(state.z()));
            }
        }
        assert!(late.iter().all(|e| e.is_finite() && *e > 1e-6));
    }
}
