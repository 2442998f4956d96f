//! Decentralized dual averaging with dynamic average consensus on the
//! gradients.

use nalgebra::DVector;

use super::{conjugate, ensure_finite, mean, require_positive, Network, SolverError};

#[derive(Debug, Clone, PartialEq)]
pub struct DdaState {
    t: usize,
    x: Vec<DVector<f64>>,
    z: Vec<DVector<f64>>,
    s: Vec<DVector<f64>>,
    /// `grad f_i(x_i)` at the current iterate.
    grads: Vec<DVector<f64>>,
    /// `y = grad d*(-a z_bar)`; the centre `x0` before the first round.
    y: DVector<f64>,
    sum_x: Vec<DVector<f64>>,
    sum_y: DVector<f64>,
}

impl DdaState {
    /// `x_i = x0`, `z_i = 0`, `s_i = grad f_i(x0)`.
    pub fn init(net: &Network<'_>) -> Result<Self, SolverError> {
        let n = net.n();
        let x0 = net.prox.center().clone();
        let x = vec![x0.clone(); n];
        let grads = net.local_gradients(&x)?;
        let zero = DVector::zeros(x0.len());
        Ok(Self {
            t: 0,
            s: grads.clone(),
            z: vec![zero.clone(); n],
            grads,
            x,
            sum_x: vec![zero.clone(); n],
            sum_y: zero,
            y: x0,
        })
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

    pub fn s(&self) -> &[DVector<f64>] {
        &self.s
    }

    pub fn local_gradients(&self) -> &[DVector<f64>] {
        &self.grads
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// `x_tilde_i = (1/t) sum_{tau=1..t} x_i`; `x0` at `t = 0`.
    pub fn x_avg(&self) -> Vec<DVector<f64>> {
        if self.t == 0 {
            return self.x.clone();
        }
        self.sum_x.iter().map(|s| s / self.t as f64).collect()
    }

    /// `y_tilde = (1/t) sum_{tau=1..t} y`; `x0` at `t = 0`.
    pub fn y_avg(&self) -> DVector<f64> {
        if self.t == 0 {
            return self.y.clone();
        }
        &self.sum_y / self.t as f64
    }

    /// One round, in the order `z`, `x`, `s`.
    pub fn step(&self, net: &Network<'_>, a: f64) -> Result<Self, SolverError> {
        require_positive("a", a)?;
        let t = self.t + 1;
        let carried: Vec<DVector<f64>> = self.z.iter().zip(&self.s).map(|(z, s)| z + s).collect();
        let z = net.mixing.mix(&carried);
        let x = z.iter().map(|zi| conjugate(t, net.prox, &(zi * -a))).collect::<Result<Vec<_>, _>>()?;
        ensure_finite(t, "iterate", &x)?;
        let grads = net.local_gradients(&x)?;
        let mut s = net.mixing.mix(&self.s);
        for ((si, g_new), g_old) in s.iter_mut().zip(&grads).zip(&self.grads) {
            *si += g_new - g_old;
        }
        ensure_finite(t, "gradient tracker", &s)?;
        let y = conjugate(t, net.prox, &(mean(&z) * -a))?;
        let sum_x = self.sum_x.iter().zip(&x).map(|(acc, xi)| acc + xi).collect();
        let sum_y = &self.sum_y + &y;
        Ok(Self { t, x, z, s, grads, y, sum_x, sum_y })
    }
}

pub fn dda_round(state: &DdaState, net: &Network<'_>, a: f64) -> Result<DdaState, SolverError> {
    state.step(net, a)
}
