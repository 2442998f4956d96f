//! Accelerated penalty method: Nesterov extrapolation on a penalized
//! objective whose consensus weight `beta0 / theta_t` grows every round.

use nalgebra::DVector;

use super::{ensure_finite, project, require_positive, Network, SolverError};

#[derive(Debug, Clone, PartialEq)]
pub struct ApmState {
    t: usize,
    /// `theta_t` for the next round; starts at `theta_0 = 1`.
    theta: f64,
    theta_prev: f64,
    beta0: f64,
    x: Vec<DVector<f64>>,
    x_prev: Vec<DVector<f64>>,
}

/// `beta0 = L / sqrt(1 - lambda_2(P))`; zero for a single agent.
pub fn penalty_weight(net: &Network<'_>, l_param: f64) -> Result<f64, SolverError> {
    require_positive("L", l_param)?;
    if net.n() == 1 {
        return Ok(0.0);
    }
    let gap = 1.0 - net.mixing.lambda2();
    if gap <= 1e-12 {
        return Err(SolverError::InvalidParameter(format!(
            "lambda_2(P) = {} leaves no spectral gap; the network is not connected",
            net.mixing.lambda2()
        )));
    }
    Ok(l_param / gap.sqrt())
}

impl ApmState {
    pub fn init(net: &Network<'_>, l_param: f64) -> Result<Self, SolverError> {
        let beta0 = penalty_weight(net, l_param)?;
        let x = vec![net.prox.center().clone(); net.n()];
        Ok(Self { t: 0, theta: 1.0, theta_prev: 1.0, beta0, x_prev: x.clone(), x })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn x(&self) -> &[DVector<f64>] {
        &self.x
    }

    pub fn step(&self, net: &Network<'_>, l_param: f64) -> Result<Self, SolverError> {
        require_positive("L", l_param)?;
        let round = self.t + 1;
        let theta = self.theta;
        let momentum = theta * (1.0 - self.theta_prev) / self.theta_prev;
        let y: Vec<DVector<f64>> =
            self.x.iter().zip(&self.x_prev).map(|(x, xp)| x + (x - xp) * momentum).collect();
        let mixed = net.mixing.mix(&y);
        let grads = net.local_gradients(&y)?;
        let penalty = self.beta0 / theta;
        let step = 1.0 / (l_param + penalty);
        let x = (0..net.n())
            .map(|i| {
                let s = &grads[i] + (&y[i] - &mixed[i]) * penalty;
                project(round, net.prox, &(&y[i] - s * step))
            })
            .collect::<Result<Vec<_>, _>>()?;
        ensure_finite(round, "iterate", &x)?;
        Ok(Self {
            t: round,
            theta: theta / (1.0 + theta),
            theta_prev: theta,
            beta0: self.beta0,
            x_prev: self.x.clone(),
            x,
        })
    }
}

pub fn apm_round(state: &ApmState, net: &Network<'_>, l_param: f64) -> Result<ApmState, SolverError> {
    state.step(net, l_param)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_topology, metropolis_weights, MixingMatrix, TopologyKind};
    use crate::problem::{reference_optimum, synth_lasso, SynthSpec};
    use crate::prox::make_prox;
    use nalgebra::DMatrix;

    #[test]
    fn theta_follows_harmonic_sequence() {
        let (prob, _) = synth_lasso(&SynthSpec::new(4, 6, 5, 2, 0.1), 1).unwrap();
        let mixing = metropolis_weights(&build_topology(TopologyKind::Cycle, 4, None).unwrap()).unwrap();
        let prox = make_prox(DVector::zeros(6), *prob.constraint()).unwrap();
        let net = Network::new(&prob, &mixing, &prox).unwrap();
        let mut state = ApmState::init(&net, prob.lipschitz()).unwrap();
        for k in 0..=10 {
            assert!((state.theta() - 1.0 / (k as f64 + 1.0)).abs() < 1e-15);
            state = state.step(&net, prob.lipschitz()).unwrap();
            for x in state.x() {
                assert!(prob.constraint().contains(x, 1e-9));
            }
        }
        assert!((state.beta0() - prob.lipschitz() / (1.0 - mixing.lambda2()).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn disconnected_mixing_rejected() {
        let (prob, _) = synth_lasso(&SynthSpec::new(2, 4, 3, 2, 0.1), 1).unwrap();
        let mixing = MixingMatrix::from_weights(DMatrix::identity(2, 2)).unwrap();
        let prox = make_prox(DVector::zeros(4), *prob.constraint()).unwrap();
        let net = Network::new(&prob, &mixing, &prox).unwrap();
        assert!(matches!(ApmState::init(&net, 1.0), Err(SolverError::InvalidParameter(_))));
    }

    #[test]
    fn single_agent_accelerated_projected_gradient() {
        let (prob, _) = synth_lasso(&SynthSpec::new(1, 10, 8, 3, 0.1), 4).unwrap();
        let reference = reference_optimum(&prob, 1e-10).unwrap();
        let mixing = MixingMatrix::uniform(1).unwrap();
        let prox = make_prox(DVector::zeros(10), *prob.constraint()).unwrap();
        let net = Network::new(&prob, &mixing, &prox).unwrap();
        let mut state = ApmState::init(&net, prob.lipschitz()).unwrap();
        assert_eq!(state.beta0(), 0.0);
        // Oracle: FISTA-style projected gradient with the same momentum schedule.
        let (mut x, mut x_prev) = (DVector::zeros(10), DVector::zeros(10));
        let step = 1.0 / prob.lipschitz();
        for k in 0..300usize {
            let mom = if k == 0 { 0.0 } else { (k as f64 - 1.0) / (k as f64 + 1.0) };
            let y: DVector<f64> = &x + (&x - &x_prev) * mom;
            let next = prob.constraint().project(&(&y - prob.gradient(&y).unwrap() * step)).unwrap();
            x_prev = std::mem::replace(&mut x, next);
            state = state.step(&net, prob.lipschitz()).unwrap();
            assert!((&state.x()[0] - &x).amax() < 1e-9);
        }
        assert!(prob.objective(&state.x()[0]).unwrap() - reference.f_star < 1e-4);
    }
}
