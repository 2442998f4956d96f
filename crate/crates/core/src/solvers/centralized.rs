//! Single-machine dual averaging and accelerated dual averaging on the
//! global objective `f = (1/n) sum f_i`.

use nalgebra::DVector;

use super::{conjugate, ensure_finite, require_positive, SolverError};
use crate::problem::DecentralizedProblem;
use crate::prox::ProxSetup;
use crate::theory::adda_weights;

/// Dual averaging with a constant weight: `x_t = grad d*(-a z_t)`,
/// `z_t = sum_{tau < t} grad f(x_tau)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DaState {
    t: usize,
    z: DVector<f64>,
    x: DVector<f64>,
}

impl DaState {
    pub fn init(prox: &ProxSetup) -> Self {
        Self { t: 0, z: DVector::zeros(prox.dim()), x: prox.center().clone() }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn step(&self, prob: &DecentralizedProblem, prox: &ProxSetup, a: f64) -> Result<Self, SolverError> {
        require_positive("a", a)?;
        let t = self.t + 1;
        let z = &self.z + prob.gradient(&self.x)?;
        let x = conjugate(t, prox, &(&z * -a))?;
        ensure_finite(t, "iterate", std::slice::from_ref(&x))?;
        Ok(Self { t, z, x })
    }
}

/// Accelerated dual averaging with `a_t = a(t+1)`, `A_t = sum a_tau`.
///
/// The state after `init` is round `t = 1`: `u = x0`, `w = v = grad d*(-a_1 grad f(x0))`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaState {
    t: usize,
    a: f64,
    u: DVector<f64>,
    v: DVector<f64>,
    w: DVector<f64>,
    dual_sum: DVector<f64>,
}

impl AdaState {
    pub fn init(prob: &DecentralizedProblem, prox: &ProxSetup, a: f64) -> Result<Self, SolverError> {
        require_positive("a", a)?;
        let (a1, _) = adda_weights(a, 1);
        let u = prox.center().clone();
        let dual_sum = prob.gradient(&u)? * a1;
        let w = conjugate(1, prox, &-&dual_sum)?;
        Ok(Self { t: 1, a, u, v: w.clone(), w, dual_sum })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn u(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn step(&self, prob: &DecentralizedProblem, prox: &ProxSetup) -> Result<Self, SolverError> {
        let t = self.t + 1;
        let (a_t, big_a) = adda_weights(self.a, t);
        let (_, big_a_prev) = adda_weights(self.a, t - 1);
        let keep = big_a_prev / big_a;
        let fresh = a_t / big_a;
        let u = &self.v * keep + &self.w * fresh;
        let dual_sum = &self.dual_sum + prob.gradient(&u)? * a_t;
        let w = conjugate(t, prox, &-&dual_sum)?;
        let v = &self.v * keep + &w * fresh;
        ensure_finite(t, "iterate", std::slice::from_ref(&v))?;
        Ok(Self { t, a: self.a, u, v, w, dual_sum })
    }
}

/// `x_0, ..., x_T` of centralized dual averaging.
pub fn centralized_da_run(
    prob: &DecentralizedProblem,
    prox: &ProxSetup,
    a: f64,
    rounds: usize,
) -> Result<Vec<DVector<f64>>, SolverError> {
    require_positive("a", a)?;
    let mut state = DaState::init(prox);
    let mut out = vec![state.x.clone()];
    for _ in 0..rounds {
        state = state.step(prob, prox, a)?;
        out.push(state.x.clone());
    }
    Ok(out)
}

/// `x_0, v_1, ..., v_T` of centralized accelerated dual averaging.
pub fn centralized_ada_run(
    prob: &DecentralizedProblem,
    prox: &ProxSetup,
    a: f64,
    rounds: usize,
) -> Result<Vec<DVector<f64>>, SolverError> {
    require_positive("a", a)?;
    let mut out = vec![prox.center().clone()];
    if rounds == 0 {
        return Ok(out);
    }
    let mut state = AdaState::init(prob, prox, a)?;
    out.push(state.v.clone());
    for _ in 1..rounds {
        state = state.step(prob, prox)?;
        out.push(state.v.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{reference_optimum, synth_lasso, AgentData, SynthSpec};
    use crate::prox::{make_prox, ConstraintSet};
    use nalgebra::{dvector, DMatrix};

    #[test]
    fn da_monotone_on_one_dimensional_quadratic() {
        // f = (x - 3)^2 / 2, unconstrained, a = 0.5.
        let prob = DecentralizedProblem::new(
            vec![AgentData::new(DMatrix::from_element(1, 1, 1.0), dvector![3.0]).unwrap()],
            ConstraintSet::unconstrained(1),
        )
        .unwrap();
        let prox = make_prox(dvector![0.0], ConstraintSet::unconstrained(1)).unwrap();
        let xs = centralized_da_run(&prob, &prox, 0.5, 30).unwrap();
        let dist: Vec<f64> = xs.iter().map(|x| (x[0] - 3.0).abs()).collect();
        assert!(dist.windows(2).all(|w| w[1] <= w[0]));
        assert!(dist[30] < 1e-8);
    }

    #[test]
    fn zero_rounds_return_initial_point() {
        let (prob, _) = synth_lasso(&SynthSpec::new(2, 4, 3, 2, 0.1), 3).unwrap();
        let prox = make_prox(DVector::zeros(4), *prob.constraint()).unwrap();
        assert_eq!(centralized_da_run(&prob, &prox, 0.01, 0).unwrap(), vec![DVector::zeros(4)]);
        assert_eq!(centralized_ada_run(&prob, &prox, 0.01, 0).unwrap(), vec![DVector::zeros(4)]);
        assert!(centralized_da_run(&prob, &prox, 0.0, 3).is_err());
    }

    #[test]
    fn ada_beats_da_to_tight_accuracy() {
        let (prob, _) = synth_lasso(&SynthSpec::new(2, 40, 8, 3, 0.1), 7).unwrap();
        let reference = reference_optimum(&prob, 1e-12).unwrap();
        let prox = make_prox(DVector::zeros(40), *prob.constraint()).unwrap();
        let a = 0.5 / prob.lipschitz();
        let first_hit = |xs: &[DVector<f64>]| {
            xs.iter().position(|x| prob.objective(x).unwrap() - reference.f_star <= 1e-6).unwrap_or(usize::MAX)
        };
        let da = centralized_da_run(&prob, &prox, a, 20_000).unwrap();
        let ada = centralized_ada_run(&prob, &prox, a, 20_000).unwrap();
        let (hit_da, hit_ada) = (first_hit(&da), first_hit(&ada));
        assert!(hit_ada < hit_da, "ada {hit_ada} da {hit_da}");
        assert!(hit_ada < usize::MAX);
    }

    #[test]
    fn ada_iterates_stay_feasible() {
        let (prob, _) = synth_lasso(&SynthSpec::new(3, 6, 4, 2, 0.1), 1).unwrap();
        let prox = make_prox(DVector::zeros(6), *prob.constraint()).unwrap();
        let mut s = AdaState::init(&prob, &prox, 1.0 / (6.0 * prob.lipschitz())).unwrap();
        for _ in 0..100 {
            s = s.step(&prob, &prox).unwrap();
            for p in [s.u(), s.v(), s.w()] {
                assert!(prob.constraint().contains(p, 1e-9));
            }
        }
    }
}
