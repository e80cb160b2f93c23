//! Synchronous decentralized primal-dual iteration over a simulated network.
//!
//! Every round, node `i` reads `(x_j, λ_ji)` from each neighbor's previous
//! state, draws a stochastic gradient and applies [`pd_step`]. Rounds run
//! node-parallel against an immutable snapshot, so traces do not depend on
//! the number of worker threads.

mod asvr;
mod flat;
mod svrg;

pub use asvr::{asvr_beta_next, asvr_epoch_len, run_asvr, AsvrNodeState, AsvrRun};
pub use flat::{run_flat, FlatRun};
pub use svrg::{run_svrg, svrg_epoch_lengths};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::estimators::{EstimatorError, EstimatorKind};
use crate::graph::Topology;
use crate::linalg;
use crate::metrics::{self, BregmanAnchor, MetricsError, ReferenceSolution, Trace, TraceRow};
use crate::problem::{LocalProblem, Regularizer};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("no message from neighbor {0}")]
    MissingNeighborMessage(usize),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("node {node}: the SGD step size needs a gradient variance estimate")]
    MissingSigma { node: usize },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// `γ = (1/η + ρ·deg)^-1`; equals `η` for an isolated node.
pub fn gamma<T: Scalar>(eta: T, rho: T, degree: usize) -> T {
    if degree == 0 {
        eta
    } else {
        T::one() / (T::one() / eta + rho * T::of_usize(degree))
    }
}

/// Primal iterate, one dual per neighbor (in sorted neighbor order) and the
/// subgradient certificate `v ∈ ∂h(x)` produced by the last prox.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState<T> {
    pub x: Vec<T>,
    pub duals: Vec<Vec<T>>,
    pub subgradient: Vec<T>,
}

impl<T: Scalar> NodeState<T> {
    pub fn new(x: Vec<T>, degree: usize) -> Self {
        let n = x.len();
        NodeState {
            x,
            duals: vec![linalg::zeros(n); degree],
            subgradient: linalg::zeros(n),
        }
    }
}

/// What node `i` hears in one round: `(x_j, λ_ji)` for each neighbor `j`.
#[derive(Debug, Clone)]
pub struct RoundInbox<'a, T> {
    neighbors: &'a [usize],
    messages: Vec<Option<(&'a [T], &'a [T])>>,
}

impl<'a, T: Scalar> RoundInbox<'a, T> {
    pub fn new(neighbors: &'a [usize]) -> Self {
        RoundInbox {
            neighbors,
            messages: vec![None; neighbors.len()],
        }
    }

    /// Records neighbor `j`'s primal value and its dual toward the receiver.
    pub fn deliver(&mut self, j: usize, x_j: &'a [T], lambda_ji: &'a [T]) -> Result<(), EngineError> {
        let slot = self
            .neighbors
            .binary_search(&j)
            .map_err(|_| EngineError::InvalidConfig(format!("{j} is not a neighbor")))?;
        self.messages[slot] = Some((x_j, lambda_ji));
        Ok(())
    }

    /// Reads every neighbor from `states`.
    pub fn gather(topology: &'a Topology, i: usize, states: &'a [NodeState<T>]) -> Self {
        let neighbors = topology.neighbors(i);
        let messages = neighbors
            .iter()
            .map(|&j| {
                let back = topology.neighbor_slot(j, i).expect("adjacency is symmetric");
                Some((states[j].x.as_slice(), states[j].duals[back].as_slice()))
            })
            .collect();
        RoundInbox { neighbors, messages }
    }

    pub(crate) fn from_parts(neighbors: &'a [usize], messages: Vec<Option<(&'a [T], &'a [T])>>) -> Self {
        RoundInbox { neighbors, messages }
    }

    pub fn neighbors(&self) -> &[usize] {
        self.neighbors
    }

    fn message(&self, slot: usize) -> Result<(&'a [T], &'a [T]), EngineError> {
        self.messages[slot].ok_or(EngineError::MissingNeighborMessage(self.neighbors[slot]))
    }
}

/// One primal-dual update:
/// `x⁺ = prox_{γh}((γ/η)(x - ηg) + γ Σ_j (ρ x_j - λ_ji))`,
/// `λ_ij⁺ = -λ_ji + ρ(x_j - x⁺)`.
pub fn pd_step<T: Scalar>(
    x: &[T],
    inbox: &RoundInbox<'_, T>,
    g: &[T],
    eta: T,
    rho: T,
    regularizer: &Regularizer<T>,
) -> Result<NodeState<T>, EngineError> {
    let n = x.len();
    if g.len() != n {
        return Err(EngineError::InvalidConfig(format!(
            "gradient has dimension {}, iterate {n}",
            g.len()
        )));
    }
    let deg = inbox.neighbors.len();
    let gam = gamma(eta, rho, deg);
    let mut pull = linalg::zeros::<T>(n);
    for slot in 0..deg {
        let (xj, lji) = inbox.message(slot)?;
        for ((p, &a), &l) in pull.iter_mut().zip(xj).zip(lji) {
            *p += rho * a - l;
        }
    }
    let ratio = gam / eta;
    let z: Vec<T> = x
        .iter()
        .zip(g)
        .zip(&pull)
        .map(|((&xv, &gv), &pv)| ratio * (xv - eta * gv) + gam * pv)
        .collect();
    let mut x_new = z.clone();
    regularizer.prox_in_place(&mut x_new, gam);
    let subgradient = z.iter().zip(&x_new).map(|(&a, &b)| (a - b) / gam).collect();
    let duals = (0..deg)
        .map(|slot| {
            let (xj, lji) = inbox.message(slot).expect("checked above");
            lji.iter()
                .zip(xj)
                .zip(&x_new)
                .map(|((&l, &a), &b)| -l + rho * (a - b))
                .collect()
        })
        .collect();
    Ok(NodeState {
        x: x_new,
        duals,
        subgradient,
    })
}

/// Per-node step sizes.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSize<T> {
    /// Default rule for the estimator, see [`default_stepsize`].
    Auto,
    Uniform(T),
    PerNode(Vec<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig<T> {
    pub algorithm: EstimatorKind,
    pub rho: T,
    pub eta: StepSize<T>,
    /// Rounds for flat runs; total inner-round cap for epoch runs.
    pub iterations: usize,
    /// Epoch count for epoch runs; when set it takes precedence.
    pub epochs: Option<usize>,
    /// First epoch length (SVRG++) or the `m` in `m_s = ceil(m/β_s)` (ASVR).
    pub m1: Option<usize>,
    pub max_epoch_len: usize,
    pub beta1: T,
    /// Fixed ASVR oracle probability instead of `p_s = β_s`.
    pub probability: Option<T>,
    pub early_stop_threshold: Option<T>,
    pub seed: u64,
    pub w1_hint: T,
    /// Per-node `σ_i` for the SGD step size.
    pub sigma: Option<Vec<T>>,
    pub log_stride: usize,
    pub threads: Option<usize>,
    /// Common starting point; zero when absent.
    pub x0: Option<Vec<T>>,
}

impl<T: Scalar> RunConfig<T> {
    pub fn new(algorithm: EstimatorKind, rho: T, iterations: usize) -> Self {
        RunConfig {
            algorithm,
            rho,
            eta: StepSize::Auto,
            iterations,
            epochs: None,
            m1: None,
            max_epoch_len: 1000,
            beta1: T::of(0.5),
            probability: None,
            early_stop_threshold: None,
            seed: 0,
            w1_hint: T::one(),
            sigma: None,
            log_stride: 1,
            threads: None,
            x0: None,
        }
    }

    fn validate(&self, problems: &[LocalProblem<T>], topology: &Topology) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::InvalidConfig(m));
        if problems.len() != topology.num_nodes() {
            return bad(format!(
                "{} problems for {} nodes",
                problems.len(),
                topology.num_nodes()
            ));
        }
        let n = problems[0].dim();
        if problems.iter().any(|p| p.dim() != n) {
            return bad("all local problems must share one dimension".into());
        }
        if !(self.rho > T::zero() && self.rho.is_finite()) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if self.iterations == 0 && self.epochs.is_none() {
            return bad("iterations must be at least 1".into());
        }
        if self.log_stride == 0 {
            return bad("log stride must be at least 1".into());
        }
        if !(self.beta1 > T::zero() && self.beta1 <= T::one()) {
            return bad(format!("beta1 must lie in (0, 1], got {}", self.beta1));
        }
        if self.max_epoch_len == 0 || self.m1 == Some(0) || self.epochs == Some(0) {
            return bad("epoch lengths and counts must be positive".into());
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != n {
                return bad(format!("x0 has dimension {}, problems {n}", x0.len()));
            }
        }
        if let Some(s) = &self.sigma {
            if s.len() != problems.len() {
                return bad(format!("{} sigma values for {} nodes", s.len(), problems.len()));
            }
        }
        if self.threads == Some(0) {
            return bad("thread count must be at least 1".into());
        }
        Ok(())
    }

    /// Resolves the step size of every node.
    pub fn step_sizes(&self, problems: &[LocalProblem<T>]) -> Result<Vec<T>, EngineError> {
        let etas = match &self.eta {
            StepSize::Uniform(e) => vec![*e; problems.len()],
            StepSize::PerNode(v) => {
                if v.len() != problems.len() {
                    return Err(EngineError::InvalidConfig(format!(
                        "{} step sizes for {} nodes",
                        v.len(),
                        problems.len()
                    )));
                }
                v.clone()
            }
            StepSize::Auto => problems
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let sigma = self.sigma.as_ref().map(|s| s[i]);
                    default_stepsize(
                        self.algorithm,
                        p.smoothness(),
                        p.num_components(),
                        p.dim(),
                        sigma,
                        self.iterations,
                        self.w1_hint,
                    )
                    .map_err(|e| match e {
                        EngineError::MissingSigma { .. } => EngineError::MissingSigma { node: i },
                        other => other,
                    })
                })
                .collect::<Result<_, _>>()?,
        };
        if let Some(e) = etas.iter().find(|e| !(**e > T::zero() && e.is_finite())) {
            return Err(EngineError::InvalidConfig(format!("step size must be positive, got {e}")));
        }
        Ok(etas)
    }
}

/// Step size under which each estimator's complexity bound holds.
///
/// | kind | η |
/// |---|---|
/// | Full | 1/(2L) |
/// | Sgd | min(√W₁/(σ√T), 1/(4L)) |
/// | Saga | 1/(2√(L·max{K, 16L})) |
/// | SvrgPlusPlus | 1/(6L) |
/// | LooplessSvrg | 1/√(2L·max{K, 32L}) |
/// | Sega | 1/(8nL) |
/// | AsvrInner | 2/(5L) |
pub fn default_stepsize<T: Scalar>(
    kind: EstimatorKind,
    smoothness: T,
    components: usize,
    dim: usize,
    sigma: Option<T>,
    iterations: usize,
    w1_hint: T,
) -> Result<T, EngineError> {
    let l = smoothness;
    let k = T::of_usize(components);
    let eta = match kind {
        EstimatorKind::Full => T::one() / (T::of(2.0) * l),
        EstimatorKind::Sgd => {
            let sigma = sigma.ok_or(EngineError::MissingSigma { node: 0 })?;
            let cap = T::one() / (T::of(4.0) * l);
            let raw = w1_hint.sqrt() / (sigma * T::of_usize(iterations.max(1)).sqrt());
            if raw.is_finite() {
                raw.min(cap)
            } else {
                cap
            }
        }
        EstimatorKind::Saga => T::one() / (T::of(2.0) * (l * k.max(T::of(16.0) * l)).sqrt()),
        EstimatorKind::SvrgPlusPlus => T::one() / (T::of(6.0) * l),
        EstimatorKind::LooplessSvrg => T::one() / (T::of(2.0) * l * k.max(T::of(32.0) * l)).sqrt(),
        EstimatorKind::Sega => T::one() / (T::of(8.0) * T::of_usize(dim) * l),
        EstimatorKind::AsvrInner => T::of(2.0) / (T::of(5.0) * l),
    };
    Ok(eta)
}

/// Dispatches to the runner matching `config.algorithm`.
pub fn run<T: Scalar>(
    problems: &[LocalProblem<T>],
    topology: &Topology,
    config: &RunConfig<T>,
    reference: Option<&ReferenceSolution<T>>,
) -> Result<Trace<T>, EngineError> {
    match config.algorithm {
        EstimatorKind::SvrgPlusPlus => run_svrg(problems, topology, config, reference),
        EstimatorKind::AsvrInner => run_asvr(problems, topology, config, reference),
        _ => run_flat(problems, topology, config, reference),
    }
}

/// Streams per node: 0 for estimator draws, 1 for loopless refreshes.
const STREAMS_PER_NODE: u64 = 2;

pub(crate) fn node_rng(seed: u64, node: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(node as u64 * STREAMS_PER_NODE + stream);
    rng
}

pub(crate) fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, EngineError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        b = b.num_threads(t);
    }
    b.build().map_err(|e| EngineError::ThreadPool(e.to_string()))
}

/// Cumulative work counters shared by all runners.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub iter: u64,
    pub oracle_calls: u64,
    pub sketched_calls: u64,
    pub comm_rounds: u64,
}

/// Builds trace rows from node iterates.
pub(crate) struct Recorder<'a, T> {
    problems: &'a [LocalProblem<T>],
    topology: &'a Topology,
    anchor: Option<BregmanAnchor<T>>,
    stride: u64,
    pub trace: Trace<T>,
}

impl<'a, T: Scalar> Recorder<'a, T> {
    pub fn new(
        problems: &'a [LocalProblem<T>],
        topology: &'a Topology,
        reference: Option<&'a ReferenceSolution<T>>,
        stride: usize,
    ) -> Result<Self, EngineError> {
        let anchor = reference.map(|r| BregmanAnchor::new(problems, r)).transpose()?;
        Ok(Recorder {
            problems,
            topology,
            anchor,
            stride: stride as u64,
            trace: Trace::default(),
        })
    }

    pub fn gap<'b, I>(&self, xs: I) -> Result<T, EngineError>
    where
        I: Clone + ExactSizeIterator<Item = &'b [T]>,
        T: 'b,
    {
        match &self.anchor {
            Some(a) => Ok(a.gap(xs, self.problems)?),
            None => Ok(T::nan()),
        }
    }

    pub fn objective<'b, I>(&self, xs: I) -> T
    where
        I: Iterator<Item = &'b [T]>,
        T: 'b,
    {
        xs.zip(self.problems)
            .map(|(x, p)| p.value_unchecked(x) + p.regularizer().value(x))
            .sum()
    }

    /// Appends a row when `force` is set or the iteration hits the stride.
    pub fn record<'b, I>(&mut self, counters: Counters, epoch: Option<u64>, xs: I, force: bool) -> Result<(), EngineError>
    where
        I: Clone + ExactSizeIterator<Item = &'b [T]>,
        T: 'b,
    {
        if !force && !counters.iter.is_multiple_of(self.stride) {
            return Ok(());
        }
        if self.trace.rows.last().is_some_and(|r| r.iter == counters.iter) {
            return Ok(());
        }
        let row = TraceRow {
            iter: counters.iter,
            epoch,
            oracle_calls: counters.oracle_calls,
            sketched_calls: counters.sketched_calls,
            comm_rounds: counters.comm_rounds,
            bregman_gap: self.gap(xs.clone())?,
            consensus_residual: metrics::consensus_residual(xs.clone(), self.topology),
            objective: self.objective(xs),
        };
        self.trace.rows.push(row);
        Ok(())
    }
}
