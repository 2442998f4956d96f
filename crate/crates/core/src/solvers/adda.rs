//! Accelerated decentralized dual averaging.

use nalgebra::DVector;

use super::{conjugate, ensure_finite, require_positive, Network, SolverError};
use crate::theory::adda_weights;

/// Agent states of ADDA. The state returned by `init` is round `t = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AddaState {
    t: usize,
    a: f64,
    u: Vec<DVector<f64>>,
    v: Vec<DVector<f64>>,
    w: Vec<DVector<f64>>,
    q: Vec<DVector<f64>>,
    /// `grad f_i(u_i)` at the current round.
    grads: Vec<DVector<f64>>,
    /// `sum_{tau <= t} a_tau q_i`.
    dual_sum: Vec<DVector<f64>>,
}

impl AddaState {
    /// `u_i = x0`, `q_i = grad f_i(x0)`, `w_i = v_i = grad d*(-a_1 q_i)`.
    pub fn init(net: &Network<'_>, a: f64) -> Result<Self, SolverError> {
        require_positive("a", a)?;
        let (a1, _) = adda_weights(a, 1);
        let u = vec![net.prox.center().clone(); net.n()];
        let grads = net.local_gradients(&u)?;
        let dual_sum: Vec<DVector<f64>> = grads.iter().map(|g| g * a1).collect();
        let w = dual_sum.iter().map(|d| conjugate(1, net.prox, &-d)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { t: 1, a, u, v: w.clone(), w, q: grads.clone(), grads, dual_sum })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn u(&self) -> &[DVector<f64>] {
        &self.u
    }

    pub fn v(&self) -> &[DVector<f64>] {
        &self.v
    }

    pub fn w(&self) -> &[DVector<f64>] {
        &self.w
    }

    pub fn q(&self) -> &[DVector<f64>] {
        &self.q
    }

    pub fn local_gradients(&self) -> &[DVector<f64>] {
        &self.grads
    }

    pub fn step(&self, net: &Network<'_>) -> Result<Self, SolverError> {
        let t = self.t + 1;
        let (a_t, big_a) = adda_weights(self.a, t);
        let (_, big_a_prev) = adda_weights(self.a, t - 1);
        let keep = big_a_prev / big_a;
        let fresh = a_t / big_a;

        let mixed_v = net.mixing.mix(&self.v);
        let u: Vec<DVector<f64>> = mixed_v.iter().zip(&self.w).map(|(mv, w)| mv * keep + w * fresh).collect();
        ensure_finite(t, "iterate", &u)?;
        let grads = net.local_gradients(&u)?;
        let mut q = net.mixing.mix(&self.q);
        for ((qi, g_new), g_old) in q.iter_mut().zip(&grads).zip(&self.grads) {
            *qi += g_new - g_old;
        }
        ensure_finite(t, "gradient tracker", &q)?;
        let dual_sum: Vec<DVector<f64>> = self.dual_sum.iter().zip(&q).map(|(d, qi)| d + qi * a_t).collect();
        let w = dual_sum.iter().map(|d| conjugate(t, net.prox, &-d)).collect::<Result<Vec<_>, _>>()?;
        let v = mixed_v.iter().zip(&w).map(|(mv, wi)| mv * keep + wi * fresh).collect();
        Ok(Self { t, a: self.a, u, v, w, q, grads, dual_sum })
    }
}

pub fn adda_round(state: &AddaState, net: &Network<'_>) -> Result<AddaState, SolverError> {
    state.step(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_topology, metropolis_weights, MixingMatrix, TopologyKind};
    use crate::problem::{synth_lasso, SynthSpec};
    use crate::prox::make_prox;
    use crate::solvers::{centralized_ada_run, mean};

    #[test]
    fn conservation_on_four_cycle() {
        let (prob, _) = synth_lasso(&SynthSpec::new(4, 8, 6, 3, 0.1), 12).unwrap();
        let mixing = metropolis_weights(&build_topology(TopologyKind::Cycle, 4, None).unwrap()).unwrap();
        let prox = make_prox(DVector::zeros(8), *prob.constraint()).unwrap();
        let net = Network::new(&prob, &mixing, &prox).unwrap();
        let mut state = AddaState::init(&net, 1.0 / (6.0 * prob.lipschitz())).unwrap();
        for _ in 0..200 {
            state = state.step(&net).unwrap();
            let tracked = mean(state.q());
            let exact = mean(state.local_gradients());
            assert!((&tracked - &exact).norm() <= 1e-10 * exact.norm().max(1.0));
        }
    }

    #[test]
    fn single_agent_matches_centralized() {
        let (prob, _) = synth_lasso(&SynthSpec::new(1, 10, 8, 3, 0.1), 6).unwrap();
        let mixing = MixingMatrix::uniform(1).unwrap();
        let prox = make_prox(DVector::zeros(10), *prob.constraint()).unwrap();
        let net = Network::new(&prob, &mixing, &prox).unwrap();
        let a = 1.0 / (6.0 * prob.lipschitz());
        let ada = centralized_ada_run(&prob, &prox, a, 50).unwrap();
        let mut state = AddaState::init(&net, a).unwrap();
        assert!((&state.v()[0] - &ada[1]).amax() <= 1e-12);
        for v in &ada[2..] {
            state = state.step(&net).unwrap();
            assert!((&state.v()[0] - v).amax() <= 1e-12);
        }
    }

    #[test]
    fn iterates_stay_feasible() {
        let (prob, _) = synth_lasso(&SynthSpec::new(4, 6, 5, 2, 0.1), 9).unwrap();
        let mixing = metropolis_weights(&build_topology(TopologyKind::Cycle, 4, None).unwrap()).unwrap();
        let prox = make_prox(DVector::zeros(6), *prob.constraint()).unwrap();
        let net = Network::new(&prob, &mixing, &prox).unwrap();
        let mut state = AddaState::init(&net, 1.0 / (6.0 * prob.lipschitz())).unwrap();
        for _ in 0..100 {
            state = state.step(&net).unwrap();
            for p in state.u().iter().chain(state.v()).chain(state.w()) {
                assert!(prob.constraint().contains(p, 1e-9));
            }
        }
        assert!(AddaState::init(&net, 0.0).is_err());
    }
}
