//! Fixtures shared by the benchmarks.

use dualavg::{
    build_topology, make_prox, metropolis_weights, synth_lasso, DecentralizedProblem, MixingMatrix, ProxSetup,
    SynthSpec, TopologyKind,
};
use nalgebra::DVector;

pub struct Fixture {
    pub problem: DecentralizedProblem,
    pub mixing: MixingMatrix,
    pub prox: ProxSetup,
}

/// A synthetic LASSO instance on a cycle of `n` agents: dimension `m`, `p` rows per agent.
pub fn cycle_fixture(n: usize, m: usize, p: usize) -> Fixture {
    let (problem, _) = synth_lasso(&SynthSpec::new(n, m, p, (m / 4).max(1), 0.1), 7).expect("valid spec");
    let mixing = metropolis_weights(&build_topology(TopologyKind::Cycle, n, None).expect("cycle")).expect("weights");
    let prox = make_prox(DVector::zeros(m), *problem.constraint()).expect("prox");
    Fixture { problem, mixing, prox }
}

/// Deterministic dense vector with mixed signs.
pub fn wavy(len: usize) -> DVector<f64> {
    DVector::from_fn(len, |i, _| ((i as f64) * 0.7).sin() * (1.0 + (i % 5) as f64))
}
