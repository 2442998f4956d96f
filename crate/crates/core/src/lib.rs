//! Decentralized dual averaging (DDA), its accelerated variant (ADDA) and the
//! classic-DDA, PG-EXTRA and APM baselines, run on constrained least squares
//! over simulated agent networks.

pub mod graph;
pub mod problem;
pub mod prox;
pub mod sim;
pub mod solvers;
pub mod theory;

pub use graph::{build_topology, metropolis_weights, Graph, GraphError, MixingMatrix, TopologyKind};
pub use problem::{
    reference_optimum, synth_lasso, AgentData, DecentralizedProblem, ProblemError, ReferenceSolution, SynthSpec,
};
pub use prox::{l1_ball_project, make_prox, ConstraintKind, ConstraintSet, ProxError, ProxSetup};
pub use sim::{
    compare, run, run_on, Algorithm, Comparison, ExperimentConfig, Instance, RunConfig, RunTrace, SimError, StepSpec,
    TopologySpec,
};
pub use solvers::{Network, SolverError};
pub use theory::{TheoremConstants, TheoryError};

/// Library version, recorded in trace sidecars.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
