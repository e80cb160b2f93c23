use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{node_rng, pd_step, thread_pool, Counters, EngineError, Recorder, RoundInbox, RunConfig};
use crate::estimators::{Estimator, EstimatorKind};
use crate::graph::Topology;
use crate::linalg;
use crate::metrics::{EpochRecord, ReferenceSolution, Trace};
use crate::problem::LocalProblem;
use crate::scalar::Scalar;

/// `β_{s+1} = (√(β⁴ + 4β²) − β²) / 2`.
pub fn asvr_beta_next<T: Scalar>(beta: T) -> T {
    let b2 = beta * beta;
    ((b2 * b2 + T::of(4.0) * b2).sqrt() - b2) / T::of(2.0)
}

/// `min(ceil(m1/β), cap)`, at least 1.
pub fn asvr_epoch_len<T: Scalar>(m1: usize, beta: T, cap: usize) -> usize {
    let raw = (T::of_usize(m1) / beta).ceil().to_f64_lossy();
    if raw.is_finite() && raw < cap as f64 {
        (raw as usize).max(1)
    } else {
        cap
    }
}

/// Per-node state of the accelerated runner. Neighbors exchange `y` and the
/// duals; `x` is where gradients are sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct AsvrNodeState<T> {
    pub y: Vec<T>,
    pub x: Vec<T>,
    pub snapshot_x: Vec<T>,
    pub snapshot_y: Vec<T>,
    pub epoch_sum_x: Vec<T>,
    pub duals: Vec<Vec<T>>,
    pub subgradient: Vec<T>,
}

struct Worker<T> {
    estimator: Estimator<T>,
    rng: ChaCha8Rng,
}

/// Epoch-by-epoch driver of the accelerated variant.
pub struct AsvrRun<'a, T> {
    problems: &'a [LocalProblem<T>],
    topology: &'a Topology,
    rho: T,
    etas: Vec<T>,
    states: Vec<AsvrNodeState<T>>,
    workers: Vec<Worker<T>>,
    counters: Counters,
    pool: rayon::ThreadPool,
    beta: T,
    fixed_probability: Option<T>,
    epoch: usize,
    inner_steps: usize,
}

impl<'a, T: Scalar> AsvrRun<'a, T> {
    /// `x̃¹ = ỹ¹ = x0`, zero duals, snapshot gradient charged.
    pub fn new(
        problems: &'a [LocalProblem<T>],
        topology: &'a Topology,
        config: &RunConfig<T>,
    ) -> Result<Self, EngineError> {
        config.validate(problems, topology)?;
        if config.algorithm != EstimatorKind::AsvrInner {
            return Err(EngineError::ConfigMismatch(format!(
                "accelerated runner needs asvr, got {}",
                config.algorithm
            )));
        }
        let etas = config.step_sizes(problems)?;
        let n = problems[0].dim();
        let x0 = config.x0.clone().unwrap_or_else(|| linalg::zeros(n));
        let mut counters = Counters::default();
        let mut states = Vec::with_capacity(problems.len());
        let mut workers = Vec::with_capacity(problems.len());
        for (i, p) in problems.iter().enumerate() {
            let (estimator, calls) = Estimator::new(EstimatorKind::AsvrInner, p, &x0);
            counters.oracle_calls += calls;
            states.push(AsvrNodeState {
                y: x0.clone(),
                x: x0.clone(),
                snapshot_x: x0.clone(),
                snapshot_y: x0.clone(),
                epoch_sum_x: linalg::zeros(n),
                duals: vec![linalg::zeros(n); topology.degree(i)],
                subgradient: linalg::zeros(n),
            });
            workers.push(Worker {
                estimator,
                rng: node_rng(config.seed, i, 0),
            });
        }
        let mut run = AsvrRun {
            problems,
            topology,
            rho: config.rho,
            etas,
            states,
            workers,
            counters,
            pool: thread_pool(config.threads)?,
            beta: config.beta1,
            fixed_probability: config.probability,
            epoch: 1,
            inner_steps: 0,
        };
        run.begin_epoch()?;
        Ok(run)
    }

    /// `x⁰ = (1−β)x̃ + βỹ`, `y⁰ = ỹ`, clears the running sum and sets `p_s`.
    fn begin_epoch(&mut self) -> Result<(), EngineError> {
        let beta = self.beta;
        for s in self.states.iter_mut() {
            s.y.clone_from(&s.snapshot_y);
            s.x = mix(beta, &s.snapshot_x, &s.y);
            s.epoch_sum_x.iter_mut().for_each(|v| *v = T::zero());
        }
        let p = self.fixed_probability.unwrap_or(beta);
        for w in self.workers.iter_mut() {
            w.estimator.set_probability(p)?;
        }
        self.inner_steps = 0;
        Ok(())
    }

    /// One inner round: gradient at `x`, primal-dual step on `y`, then
    /// `x = (1−β)x̃ + βy`.
    pub fn step(&mut self) -> Result<(), EngineError> {
        let AsvrRun {
            problems,
            topology,
            rho,
            etas,
            states,
            workers,
            pool,
            beta,
            ..
        } = self;
        let (rho, beta) = (*rho, *beta);
        let snapshot: &[AsvrNodeState<T>] = states;
        let outputs: Vec<Result<(AsvrNodeState<T>, u64), EngineError>> = pool.install(|| {
            workers
                .par_iter_mut()
                .enumerate()
                .map(|(i, w)| {
                    let p = &problems[i];
                    let me = &snapshot[i];
                    let sample = w.estimator.estimate(p, &me.x, &mut w.rng);
                    let neighbors = topology.neighbors(i);
                    let messages = neighbors
                        .iter()
                        .map(|&j| {
                            let back = topology.neighbor_slot(j, i).expect("adjacency is symmetric");
                            Some((snapshot[j].y.as_slice(), snapshot[j].duals[back].as_slice()))
                        })
                        .collect();
                    let inbox = RoundInbox::from_parts(neighbors, messages);
                    let out = pd_step(&me.y, &inbox, &sample.g, etas[i], rho, p.regularizer())?;
                    let x = mix(beta, &me.snapshot_x, &out.x);
                    let mut epoch_sum_x = me.epoch_sum_x.clone();
                    linalg::axpy(T::one(), &x, &mut epoch_sum_x);
                    let next = AsvrNodeState {
                        y: out.x,
                        x,
                        snapshot_x: me.snapshot_x.clone(),
                        snapshot_y: me.snapshot_y.clone(),
                        epoch_sum_x,
                        duals: out.duals,
                        subgradient: out.subgradient,
                    };
                    Ok((next, sample.oracle_calls))
                })
                .collect()
        });
        let mut next_states = Vec::with_capacity(outputs.len());
        for out in outputs {
            let (state, calls) = out?;
            self.counters.oracle_calls += calls;
            next_states.push(state);
        }
        self.states = next_states;
        self.counters.iter += 1;
        self.counters.comm_rounds += 1;
        self.inner_steps += 1;
        Ok(())
    }

    /// Closes the epoch: `x̃ ← mean of x¹..x^m`, `ỹ ← y^m`, advances `β` and,
    /// when `refresh` is set, recomputes the snapshot gradients (`K_i` each)
    /// and opens the next epoch.
    pub fn end_epoch(&mut self, refresh: bool) -> Result<(), EngineError> {
        if self.inner_steps == 0 {
            return Err(EngineError::InvalidConfig("epoch closed without inner steps".into()));
        }
        let inv = T::one() / T::of_usize(self.inner_steps);
        for s in self.states.iter_mut() {
            s.snapshot_x = s.epoch_sum_x.iter().map(|&v| v * inv).collect();
            s.snapshot_y.clone_from(&s.y);
        }
        self.beta = asvr_beta_next(self.beta);
        self.epoch += 1;
        if refresh {
            for ((w, p), s) in self.workers.iter_mut().zip(self.problems).zip(&self.states) {
                self.counters.oracle_calls += w.estimator.refresh_snapshot(p, &s.snapshot_x);
            }
            self.begin_epoch()?;
        }
        Ok(())
    }

    pub fn states(&self) -> &[AsvrNodeState<T>] {
        &self.states
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    /// `β_s` of the current epoch.
    pub fn beta(&self) -> T {
        self.beta
    }

    /// 1-based index of the current epoch.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn inner_steps(&self) -> usize {
        self.inner_steps
    }

    pub fn step_sizes(&self) -> &[T] {
        &self.etas
    }

    pub fn iterates(&self) -> impl Clone + ExactSizeIterator<Item = &[T]> {
        self.states.iter().map(|s| s.x.as_slice())
    }

    pub fn snapshots(&self) -> impl Clone + ExactSizeIterator<Item = &[T]> {
        self.states.iter().map(|s| s.snapshot_x.as_slice())
    }
}

fn mix<T: Scalar>(beta: T, anchor: &[T], y: &[T]) -> Vec<T> {
    anchor
        .iter()
        .zip(y)
        .map(|(&a, &b)| (T::one() - beta) * a + beta * b)
        .collect()
}

/// Runs the accelerated variant for `config.epochs` epochs (or until
/// `config.iterations` inner rounds). Epoch `s` has `ceil(m1/β_s)` inner
/// rounds capped at `max_epoch_len`, with `m1` defaulting to the largest
/// local dataset size. Trace rows track `x`; epoch records track `x̃`.
pub fn run_asvr<T: Scalar>(
    problems: &[LocalProblem<T>],
    topology: &Topology,
    config: &RunConfig<T>,
    reference: Option<&ReferenceSolution<T>>,
) -> Result<Trace<T>, EngineError> {
    let mut run = AsvrRun::new(problems, topology, config)?;
    let mut rec = Recorder::new(problems, topology, reference, config.log_stride)?;
    rec.record(run.counters(), None, run.iterates(), true)?;
    let m1 = config
        .m1
        .unwrap_or_else(|| problems.iter().map(|p| p.num_components()).max().unwrap_or(1));
    let budget_left = |c: Counters| config.epochs.is_some() || (c.iter as usize) < config.iterations;
    loop {
        let s = run.epoch();
        let m = asvr_epoch_len(m1, run.beta(), config.max_epoch_len);
        for _ in 0..m {
            if !budget_left(run.counters()) {
                break;
            }
            run.step()?;
            rec.record(run.counters(), Some(s as u64), run.iterates(), false)?;
        }
        if run.inner_steps() == 0 {
            break;
        }
        let more = match config.epochs {
            Some(total) => s < total,
            None => budget_left(run.counters()),
        };
        run.end_epoch(more)?;
        rec.trace.epochs.push(EpochRecord {
            epoch: s as u64,
            iter: run.counters().iter,
            oracle_calls: run.counters().oracle_calls,
            bregman_gap: rec.gap(run.snapshots())?,
            objective: rec.objective(run.snapshots()),
        });
        if !more {
            rec.record(run.counters(), Some(s as u64), run.iterates(), true)?;
            break;
        }
    }
    Ok(rec.trace)
}
