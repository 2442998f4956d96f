//! PG-EXTRA with the projection onto the constraint set as its proximal step.

use nalgebra::DVector;

use super::{ensure_finite, project, require_positive, Network, SolverError};

#[derive(Debug, Clone, PartialEq)]
pub struct PgExtraState {
    t: usize,
    x_hat: Vec<DVector<f64>>,
    x: Vec<DVector<f64>>,
    x_prev: Vec<DVector<f64>>,
    grads: Vec<DVector<f64>>,
    grads_prev: Vec<DVector<f64>>,
}

impl PgExtraState {
    pub fn init(net: &Network<'_>) -> Result<Self, SolverError> {
        let x = vec![net.prox.center().clone(); net.n()];
        let grads = net.local_gradients(&x)?;
        Ok(Self { t: 0, x_hat: x.clone(), x_prev: x.clone(), x, grads_prev: grads.clone(), grads })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn x(&self) -> &[DVector<f64>] {
        &self.x
    }

    pub fn x_hat(&self) -> &[DVector<f64>] {
        &self.x_hat
    }

    /// Round 1 is the plain step `x_hat = P x0 - a grad f(x0)`; later rounds use
    /// `x_hat' = P x + x_hat - P~ x_prev - a (grad f(x) - grad f(x_prev))`,
    /// `P~ = (P + I) / 2`.
    pub fn step(&self, net: &Network<'_>, a: f64) -> Result<Self, SolverError> {
        require_positive("a", a)?;
        let t = self.t + 1;
        let mixed = net.mixing.mix(&self.x);
        let x_hat: Vec<DVector<f64>> = if self.t == 0 {
            mixed.iter().zip(&self.grads).map(|(px, g)| px - g * a).collect()
        } else {
            let mixed_prev = net.mixing.mix(&self.x_prev);
            (0..net.n())
                .map(|i| {
                    let lazy_prev = (&mixed_prev[i] + &self.x_prev[i]) * 0.5;
                    &mixed[i] + &self.x_hat[i] - lazy_prev - (&self.grads[i] - &self.grads_prev[i]) * a
                })
                .collect()
        };
        ensure_finite(t, "iterate", &x_hat)?;
        let x = x_hat.iter().map(|v| project(t, net.prox, v)).collect::<Result<Vec<_>, _>>()?;
        let grads = net.local_gradients(&x)?;
        Ok(Self { t, x_hat, x_prev: self.x.clone(), x, grads_prev: self.grads.clone(), grads })
    }
}

pub fn pg_extra_round(state: &PgExtraState, net: &Network<'_>, a: f64) -> Result<PgExtraState, SolverError> {
    state.step(net, a)
}
