//! Decentralized stochastic primal-dual optimization.
//!
//! Nodes of an undirected graph each hold a finite-sum loss `f_i` and a
//! proximable regularizer `h_i`, and cooperatively solve
//! `min Σ_i f_i(x) + h_i(x)` by exchanging iterates and edge duals with their
//! neighbors. Gradients come from pluggable (variance-reduced) estimators.

pub mod cli;
pub mod engine;
pub mod estimators;
pub mod graph;
#[cfg(test)]
mod hp;
pub mod linalg;
pub mod metrics;
pub mod problem;
pub mod scalar;

pub use engine::{run, EngineError, NodeState, RunConfig, StepSize};
pub use estimators::{Estimator, EstimatorKind};
pub use graph::{GraphError, Topology};
pub use metrics::{compute_reference, MetricsError, ReferenceSolution, Trace, TraceRow};
pub use problem::{Dataset, LocalProblem, LossKind, ProblemError, Regularizer};
pub use scalar::Scalar;

pub type Problem = LocalProblem<f64>;
pub type Problem32 = LocalProblem<f32>;
pub type Config = RunConfig<f64>;
pub type Config32 = RunConfig<f32>;
pub type Reference = ReferenceSolution<f64>;
pub type Reference32 = ReferenceSolution<f32>;
