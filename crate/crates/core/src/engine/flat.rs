use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{node_rng, pd_step, thread_pool, Counters, EngineError, NodeState, Recorder, RoundInbox, RunConfig};
use crate::estimators::{Estimator, EstimatorKind};
use crate::graph::Topology;
use crate::linalg;
use crate::metrics::{ReferenceSolution, Trace};
use crate::problem::LocalProblem;
use crate::scalar::Scalar;

/// New state plus oracle and sketched calls from one node's round.
type NodeOutput<T> = Result<(NodeState<T>, u64, u64), EngineError>;

struct Worker<T> {
    estimator: Estimator<T>,
    rng: ChaCha8Rng,
    refresh_rng: ChaCha8Rng,
}

/// Round-by-round driver of the generic primal-dual loop.
pub struct FlatRun<'a, T> {
    problems: &'a [LocalProblem<T>],
    topology: &'a Topology,
    rho: T,
    etas: Vec<T>,
    states: Vec<NodeState<T>>,
    workers: Vec<Worker<T>>,
    counters: Counters,
    pool: rayon::ThreadPool,
}

impl<'a, T: Scalar> FlatRun<'a, T> {
    /// Initializes every node at `config.x0` (zero by default) with zero duals
    /// and charges estimator initialization to the oracle counter.
    pub fn new(
        problems: &'a [LocalProblem<T>],
        topology: &'a Topology,
        config: &RunConfig<T>,
    ) -> Result<Self, EngineError> {
        config.validate(problems, topology)?;
        if config.algorithm == EstimatorKind::AsvrInner {
            return Err(EngineError::ConfigMismatch(
                "the accelerated estimator needs the epoch runner".into(),
            ));
        }
        let etas = config.step_sizes(problems)?;
        let n = problems[0].dim();
        let x0 = config.x0.clone().unwrap_or_else(|| linalg::zeros(n));
        let mut counters = Counters::default();
        let mut states = Vec::with_capacity(problems.len());
        let mut workers = Vec::with_capacity(problems.len());
        for (i, p) in problems.iter().enumerate() {
            let (estimator, calls) = Estimator::new(config.algorithm, p, &x0);
            counters.oracle_calls += calls;
            states.push(NodeState::new(x0.clone(), topology.degree(i)));
            workers.push(Worker {
                estimator,
                rng: node_rng(config.seed, i, 0),
                refresh_rng: node_rng(config.seed, i, 1),
            });
        }
        Ok(FlatRun {
            problems,
            topology,
            rho: config.rho,
            etas,
            states,
            workers,
            counters,
            pool: thread_pool(config.threads)?,
        })
    }

    /// One synchronous round.
    pub fn step(&mut self) -> Result<(), EngineError> {
        let FlatRun {
            problems,
            topology,
            rho,
            etas,
            states,
            workers,
            pool,
            ..
        } = self;
        let snapshot: &[NodeState<T>] = states;
        let outputs: Vec<NodeOutput<T>> = pool.install(|| {
            workers
                .par_iter_mut()
                .enumerate()
                .map(|(i, w)| {
                    let p = &problems[i];
                    let x = &snapshot[i].x;
                    let sample = w.estimator.estimate(p, x, &mut w.rng);
                    let inbox = RoundInbox::gather(topology, i, snapshot);
                    let next = pd_step(x, &inbox, &sample.g, etas[i], *rho, p.regularizer())?;
                    let refresh = w.estimator.maybe_refresh(p, x, &mut w.refresh_rng);
                    Ok((next, sample.oracle_calls + refresh, sample.sketched_calls))
                })
                .collect()
        });
        let mut next_states = Vec::with_capacity(outputs.len());
        for out in outputs {
            let (state, calls, sketched) = out?;
            self.counters.oracle_calls += calls;
            self.counters.sketched_calls += sketched;
            next_states.push(state);
        }
        self.states = next_states;
        self.counters.iter += 1;
        self.counters.comm_rounds += 1;
        Ok(())
    }

    pub fn states(&self) -> &[NodeState<T>] {
        &self.states
    }

    /// Overwrites node `i`'s iterate and duals.
    pub fn set_state(&mut self, i: usize, state: NodeState<T>) {
        self.states[i] = state;
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn step_sizes(&self) -> &[T] {
        &self.etas
    }

    pub fn rho(&self) -> T {
        self.rho
    }

    pub fn estimator(&self, i: usize) -> &Estimator<T> {
        &self.workers[i].estimator
    }

    pub fn problems(&self) -> &'a [LocalProblem<T>] {
        self.problems
    }

    pub fn topology(&self) -> &'a Topology {
        self.topology
    }

    pub fn iterates(&self) -> impl Clone + ExactSizeIterator<Item = &[T]> {
        self.states.iter().map(|s| s.x.as_slice())
    }

    /// Moves every node's snapshot to the given point, charging `K_i` each.
    pub fn refresh_snapshots(&mut self, points: &[Vec<T>]) {
        for ((w, p), x) in self.workers.iter_mut().zip(self.problems).zip(points) {
            self.counters.oracle_calls += w.estimator.refresh_snapshot(p, x);
        }
    }
}

/// Runs `config.iterations` rounds of a single-loop estimator
/// (`Full`, `Sgd`, `Saga`, `LooplessSvrg`, `Sega`).
pub fn run_flat<T: Scalar>(
    problems: &[LocalProblem<T>],
    topology: &Topology,
    config: &RunConfig<T>,
    reference: Option<&ReferenceSolution<T>>,
) -> Result<Trace<T>, EngineError> {
    if matches!(config.algorithm, EstimatorKind::SvrgPlusPlus | EstimatorKind::AsvrInner) {
        return Err(EngineError::ConfigMismatch(format!(
            "{} runs in epochs",
            config.algorithm
        )));
    }
    let mut run = FlatRun::new(problems, topology, config)?;
    let mut rec = Recorder::new(problems, topology, reference, config.log_stride)?;
    rec.record(run.counters(), None, run.iterates(), true)?;
    for t in 0..config.iterations {
        run.step()?;
        rec.record(run.counters(), None, run.iterates(), t + 1 == config.iterations)?;
    }
    Ok(rec.trace)
}
