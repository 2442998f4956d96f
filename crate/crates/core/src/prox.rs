//! Quadratic reference function `d(x) = ||x - x0||^2 / 2` over an l1 ball (or
//! all of R^m), its conjugate map and the exact l1-ball projection.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute slack allowed when testing membership in the l1 ball.
pub const FEASIBILITY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProxError {
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("radius must be positive and finite, got {0}")]
    BadRadius(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("center is infeasible: l1 norm {norm} exceeds radius {radius}")]
    InfeasibleCenter { norm: f64, radius: f64 },
}

/// Shape of the feasible set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintKind {
    L1Ball { radius: f64 },
    Unconstrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub kind: ConstraintKind,
    pub dim: usize,
}

impl ConstraintSet {
    pub fn l1_ball(radius: f64, dim: usize) -> Result<Self, ProxError> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(ProxError::BadRadius(radius));
        }
        Ok(Self { kind: ConstraintKind::L1Ball { radius }, dim })
    }

    pub fn unconstrained(dim: usize) -> Self {
        Self { kind: ConstraintKind::Unconstrained, dim }
    }

    pub fn radius(&self) -> Option<f64> {
        match self.kind {
            ConstraintKind::L1Ball { radius } => Some(radius),
            ConstraintKind::Unconstrained => None,
        }
    }

    /// Euclidean diameter; `2R` for the l1 ball, `None` when unbounded.
    pub fn diameter(&self) -> Option<f64> {
        self.radius().map(|r| 2.0 * r)
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim
            && match self.kind {
                ConstraintKind::L1Ball { radius } => x.lp_norm(1) <= radius + tol,
                ConstraintKind::Unconstrained => true,
            }
    }

    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>, ProxError> {
        check_dim(self.dim, v.len())?;
        match self.kind {
            ConstraintKind::L1Ball { radius } => l1_ball_project(v, radius),
            ConstraintKind::Unconstrained => {
                if v.iter().all(|x| x.is_finite()) {
                    Ok(v.clone())
                } else {
                    Err(ProxError::NonFinite)
                }
            }
        }
    }
}

fn check_dim(expected: usize, got: usize) -> Result<(), ProxError> {
    if expected == got {
        Ok(())
    } else {
        Err(ProxError::DimensionMismatch { expected, got })
    }
}

/// Euclidean projection onto `{x : ||x||_1 <= radius}` by sorting the
/// magnitudes and soft-thresholding at the unique level `theta`.
pub fn l1_ball_project(v: &DVector<f64>, radius: f64) -> Result<DVector<f64>, ProxError> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(ProxError::BadRadius(radius));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(ProxError::NonFinite);
    }
    if v.lp_norm(1) <= radius {
        return Ok(v.clone());
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));

    // Largest k with mags[k-1] > (sum_{j<k} mags[j] - radius) / k.
    let mut cumsum = 0.0;
    let mut support = 0;
    let mut support_sum = 0.0;
    for (k, &u) in mags.iter().enumerate() {
        cumsum += u;
        if u * (k + 1) as f64 > cumsum - radius {
            support = k + 1;
            support_sum = cumsum;
        }
    }
    let mut theta = (support_sum - radius) / support as f64;
    let mut x = soft_threshold(v, theta);
    // One refinement pass absorbs the rounding left in the threshold.
    let excess = x.lp_norm(1) - radius;
    if excess > 0.0 {
        theta += excess / support as f64;
        x = soft_threshold(v, theta);
    }
    Ok(x)
}

/// Largest violation of the optimality conditions of `p = Proj(v)` onto the
/// l1 ball: `v - p = theta g` with `g` a subgradient of `||.||_1` at `p`,
/// `theta >= 0`, `||p||_1 <= radius` and `theta (||p||_1 - radius) = 0`.
pub fn projection_kkt_residual(v: &DVector<f64>, p: &DVector<f64>, radius: f64) -> f64 {
    let support: Vec<usize> = (0..p.len()).filter(|&k| p[k] != 0.0).collect();
    let theta = if support.is_empty() {
        0.0
    } else {
        support.iter().map(|&k| p[k].signum() * (v[k] - p[k])).sum::<f64>() / support.len() as f64
    };
    let mut worst: f64 = 0.0;
    for k in 0..p.len() {
        let r = if p[k] != 0.0 { (v[k] - p[k] - theta * p[k].signum()).abs() } else { (v[k].abs() - theta).max(0.0) };
        worst = worst.max(r);
    }
    let norm = p.lp_norm(1);
    worst.max(norm - radius).max(-theta).max(theta * (norm - radius).abs())
}

fn soft_threshold(v: &DVector<f64>, theta: f64) -> DVector<f64> {
    v.map(|x| x.signum() * (x.abs() - theta).max(0.0))
}

/// Reference function `d(x) = ||x - center||^2 / 2` restricted to a constraint set.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxSetup {
    center: DVector<f64>,
    constraint: ConstraintSet,
}

/// Builds the shifted quadratic reference function centred at `x0`. The
/// centre must be feasible so that it is the minimiser of `d` over the set.
pub fn make_prox(x0: DVector<f64>, constraint: ConstraintSet) -> Result<ProxSetup, ProxError> {
    check_dim(constraint.dim, x0.len())?;
    if x0.iter().any(|x| !x.is_finite()) {
        return Err(ProxError::NonFinite);
    }
    if let Some(radius) = constraint.radius() {
        let norm = x0.lp_norm(1);
        if norm > radius + FEASIBILITY_TOL {
            return Err(ProxError::InfeasibleCenter { norm, radius });
        }
    }
    Ok(ProxSetup { center: x0, constraint })
}

impl ProxSetup {
    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn constraint(&self) -> &ConstraintSet {
        &self.constraint
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `d(x)`.
    pub fn distance(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x - &self.center).norm_squared()
    }

    /// `argmax_{x in X} <g, x> - d(x)`, i.e. the projection of `center + g`.
    pub fn conjugate_map(&self, g: &DVector<f64>) -> Result<DVector<f64>, ProxError> {
        check_dim(self.dim(), g.len())?;
        self.constraint.project(&(&self.center + g))
    }
}

/// Free-function form of [`ProxSetup::conjugate_map`].
pub fn conjugate_map(setup: &ProxSetup, g: &DVector<f64>) -> Result<DVector<f64>, ProxError> {
    setup.conjugate_map(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use proptest::prelude::*;

    /// Threshold by bisection on `sum max(|v_i| - theta, 0) = radius`.
    fn bisection_project(v: &DVector<f64>, radius: f64) -> DVector<f64> {
        if v.lp_norm(1) <= radius {
            return v.clone();
        }
        let (mut lo, mut hi) = (0.0, v.amax());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let mass: f64 = v.iter().map(|x| (x.abs() - mid).max(0.0)).sum();
            if mass > radius {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        soft_threshold(v, 0.5 * (lo + hi))
    }

    #[test]
    fn projection_examples() {
        assert_eq!(l1_ball_project(&dvector![3.0, 0.0], 1.0).unwrap(), dvector![1.0, 0.0]);
        assert_eq!(l1_ball_project(&dvector![0.2, 0.1], 1.0).unwrap(), dvector![0.2, 0.1]);
        let p = l1_ball_project(&dvector![1.0, 1.0], 1.0).unwrap();
        let oracle = bisection_project(&dvector![1.0, 1.0], 1.0);
        assert!((p - dvector![0.5, 0.5]).amax() < 1e-15);
        assert!((oracle - dvector![0.5, 0.5]).amax() < 1e-12);
        let p = l1_ball_project(&dvector![-3.0, 1.0, 0.5], 2.0).unwrap();
        assert!((p - dvector![-2.0, 0.0, 0.0]).amax() < 1e-15);
    }

    #[test]
    fn kkt_residual_detects_wrong_points() {
        let v = dvector![3.0, 0.0];
        assert_eq!(projection_kkt_residual(&v, &dvector![1.0, 0.0], 1.0), 0.0);
        assert!(projection_kkt_residual(&v, &dvector![0.5, 0.5], 1.0) > 0.1);
        assert!(projection_kkt_residual(&v, &dvector![2.0, 0.0], 1.0) > 0.1);
    }

    #[test]
    fn projection_errors() {
        assert_eq!(l1_ball_project(&dvector![f64::NAN, 0.0], 1.0), Err(ProxError::NonFinite));
        assert_eq!(l1_ball_project(&dvector![f64::INFINITY], 1.0), Err(ProxError::NonFinite));
        assert_eq!(l1_ball_project(&dvector![1.0], 0.0), Err(ProxError::BadRadius(0.0)));
    }

    #[test]
    fn conjugate_map_examples() {
        let free = make_prox(dvector![0.0, 0.0], ConstraintSet::unconstrained(2)).unwrap();
        assert_eq!(free.conjugate_map(&dvector![1.0, -2.0]).unwrap(), dvector![1.0, -2.0]);
        let ball = make_prox(dvector![0.0, 0.0], ConstraintSet::l1_ball(1.0, 2).unwrap()).unwrap();
        assert_eq!(ball.conjugate_map(&dvector![3.0, 0.0]).unwrap(), dvector![1.0, 0.0]);
        let shifted = make_prox(dvector![0.25, -0.5], ConstraintSet::l1_ball(1.0, 2).unwrap()).unwrap();
        assert_eq!(shifted.conjugate_map(&dvector![0.0, 0.0]).unwrap(), dvector![0.25, -0.5]);
        assert_eq!(
            ball.conjugate_map(&dvector![1.0]),
            Err(ProxError::DimensionMismatch { expected: 2, got: 1 })
        );
    }

    #[test]
    fn make_prox_examples() {
        let ball = ConstraintSet::l1_ball(1.0, 2).unwrap();
        let p = make_prox(dvector![0.0, 0.0], ball).unwrap();
        assert_eq!(p.distance(&dvector![0.0, 0.0]), 0.0);
        assert!(make_prox(dvector![1.0, 0.0], ball).is_ok());
        assert_eq!(
            make_prox(dvector![2.0, 0.0], ball),
            Err(ProxError::InfeasibleCenter { norm: 2.0, radius: 1.0 })
        );
        assert!(matches!(ConstraintSet::l1_ball(-1.0, 2), Err(ProxError::BadRadius(_))));
    }

    fn point(m: usize) -> impl Strategy<Value = DVector<f64>> {
        proptest::collection::vec(-10.0f64..10.0, m).prop_map(DVector::from_vec)
    }

    proptest! {
        #[test]
        fn projection_matches_bisection(v in point(12), radius in 0.01f64..20.0) {
            let p = l1_ball_project(&v, radius).unwrap();
            let q = bisection_project(&v, radius);
            prop_assert!((p.clone() - q).amax() < 1e-9);
            prop_assert!(p.lp_norm(1) <= radius + FEASIBILITY_TOL);
        }

        #[test]
        fn projection_satisfies_kkt_conditions(v in point(10), radius in 0.01f64..20.0) {
            let p = l1_ball_project(&v, radius).unwrap();
            prop_assert!(projection_kkt_residual(&v, &p, radius) <= 1e-9 * (1.0 + v.amax()));
        }

        #[test]
        fn projection_idempotent(v in point(8), radius in 0.01f64..20.0) {
            let p = l1_ball_project(&v, radius).unwrap();
            let pp = l1_ball_project(&p, radius).unwrap();
            prop_assert!((p - pp).amax() <= 1e-12);
        }

        #[test]
        fn projection_kkt(v in point(6), radius in 0.1f64..5.0, seeds in proptest::collection::vec(point(6), 20)) {
            let p = l1_ball_project(&v, radius).unwrap();
            for q in seeds {
                let q = l1_ball_project(&q, radius).unwrap();
                prop_assert!((&v - &p).dot(&(q - &p)) <= 1e-9);
            }
        }

        #[test]
        fn conjugate_map_nonexpansive(x in point(5), y in point(5), c in point(5), radius in 0.1f64..5.0) {
            let center = l1_ball_project(&c, radius).unwrap();
            let setup = make_prox(center, ConstraintSet::l1_ball(radius, 5).unwrap()).unwrap();
            let gap = (setup.conjugate_map(&x).unwrap() - setup.conjugate_map(&y).unwrap()).norm();
            prop_assert!(gap <= (x - y).norm() + 1e-12);
        }
    }
}
