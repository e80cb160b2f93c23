//! Stochastic gradient estimators with per-node memory and oracle accounting.
//!
//! Every estimator splits one draw into three steps: [`Estimator::sample_outcome`]
//! consumes randomness, [`Estimator::evaluate`] is a pure function of the state
//! and the outcome, and [`Estimator::commit`] applies the memory update. The
//! enumeration oracles reuse `evaluate` over the exact outcome distribution.

use rand::Rng;
use thiserror::Error;

use crate::linalg;
use crate::problem::LocalProblem;
use crate::scalar::Scalar;

/// Largest `K_i` accepted by the enumeration oracles.
pub const MAX_ENUM_COMPONENTS: usize = 32;
/// Largest `n` accepted by the enumeration oracles.
pub const MAX_ENUM_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("probability must lie in (0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("enumeration too large: {components} components, dimension {dim} (limits {MAX_ENUM_COMPONENTS}, {MAX_ENUM_DIM})")]
    EnumerationTooLarge { components: usize, dim: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Full,
    Sgd,
    Saga,
    SvrgPlusPlus,
    LooplessSvrg,
    Sega,
    AsvrInner,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 7] = [
        EstimatorKind::Full,
        EstimatorKind::Sgd,
        EstimatorKind::Saga,
        EstimatorKind::SvrgPlusPlus,
        EstimatorKind::LooplessSvrg,
        EstimatorKind::Sega,
        EstimatorKind::AsvrInner,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Full => "full",
            EstimatorKind::Sgd => "sgd",
            EstimatorKind::Saga => "saga",
            EstimatorKind::SvrgPlusPlus => "svrg",
            EstimatorKind::LooplessSvrg => "lsvrg",
            EstimatorKind::Sega => "sega",
            EstimatorKind::AsvrInner => "asvr",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One stochastic gradient together with the oracle work it consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample<T> {
    pub g: Vec<T>,
    pub oracle_calls: u64,
    pub sketched_calls: u64,
}

/// SAGA memory: one stored gradient per component, plus their running mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SagaState<T> {
    dim: usize,
    table: Vec<T>,
    table_mean: Vec<T>,
}

impl<T: Scalar> SagaState<T> {
    /// Fills the table at `x` (costs `K_i` oracle calls).
    pub fn init(problem: &LocalProblem<T>, x: &[T]) -> Self {
        let n = problem.dim();
        let kk = problem.num_components();
        let mut table = linalg::zeros(n * kk);
        for k in 0..kk {
            problem.add_component_grad(x, k, T::one(), &mut table[k * n..(k + 1) * n]);
        }
        let table_mean = linalg::mean(table.chunks_exact(n), n);
        SagaState {
            dim: n,
            table,
            table_mean,
        }
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.table[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.table.chunks_exact(self.dim)
    }

    pub fn table_mean(&self) -> &[T] {
        &self.table_mean
    }

    fn replace(&mut self, k: usize, fresh: &[T]) {
        let inv_k = T::one() / T::of_usize(self.table.len() / self.dim);
        let row = &mut self.table[k * self.dim..(k + 1) * self.dim];
        for ((m, r), &f) in self.table_mean.iter_mut().zip(row.iter_mut()).zip(fresh) {
            *m += (f - *r) * inv_k;
            *r = f;
        }
    }
}

/// Anchor point and its cached full gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotState<T> {
    pub snapshot_x: Vec<T>,
    pub snapshot_full_grad: Vec<T>,
    pub epoch_index: usize,
    pub inner_counter: usize,
}

impl<T: Scalar> SnapshotState<T> {
    /// Snapshot at `x` (costs `K_i` oracle calls).
    pub fn new(problem: &LocalProblem<T>, x: &[T]) -> Self {
        SnapshotState {
            snapshot_x: x.to_vec(),
            snapshot_full_grad: problem.full_grad_unchecked(x),
            epoch_index: 0,
            inner_counter: 0,
        }
    }

    /// Moves the anchor to `x`, recomputing its full gradient (`K_i` calls).
    pub fn refresh(&mut self, problem: &LocalProblem<T>, x: &[T]) {
        self.snapshot_x.copy_from_slice(x);
        self.snapshot_full_grad = problem.full_grad_unchecked(x);
        self.epoch_index += 1;
        self.inner_counter = 0;
    }
}

/// SEGA coordinate memory, zero at start.
#[derive(Debug, Clone, PartialEq)]
pub struct SegaState<T> {
    pub h: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorState<T> {
    Stateless,
    Saga(SagaState<T>),
    Snapshot(SnapshotState<T>),
    Sega(SegaState<T>),
}

/// The randomness consumed by a single estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Deterministic full gradient.
    Full,
    /// Component `k` drawn uniformly.
    Component(usize),
    /// Coordinate `j` drawn uniformly.
    Coordinate(usize),
    /// ASVR Bernoulli miss: no oracle call.
    Skip,
}

/// Memory update produced by [`Estimator::evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Update<T> {
    None,
    SagaRow { k: usize, fresh: Vec<T> },
    SegaCoordinate { j: usize, value: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimator<T> {
    kind: EstimatorKind,
    state: EstimatorState<T>,
    probability: T,
}

impl<T: Scalar> Estimator<T> {
    /// Builds the estimator at `x0` and returns the oracle calls charged for
    /// initialization (SAGA table, first snapshot).
    pub fn new(kind: EstimatorKind, problem: &LocalProblem<T>, x0: &[T]) -> (Self, u64) {
        let kk = problem.num_components() as u64;
        let (state, calls) = match kind {
            EstimatorKind::Full | EstimatorKind::Sgd => (EstimatorState::Stateless, 0),
            EstimatorKind::Saga => (EstimatorState::Saga(SagaState::init(problem, x0)), kk),
            EstimatorKind::SvrgPlusPlus | EstimatorKind::LooplessSvrg | EstimatorKind::AsvrInner => {
                (EstimatorState::Snapshot(SnapshotState::new(problem, x0)), kk)
            }
            EstimatorKind::Sega => (
                EstimatorState::Sega(SegaState {
                    h: linalg::zeros(problem.dim()),
                }),
                0,
            ),
        };
        (
            Estimator {
                kind,
                state,
                probability: T::one(),
            },
            calls,
        )
    }

    /// Assembles an estimator from explicit state, e.g. for tests.
    pub fn from_state(kind: EstimatorKind, state: EstimatorState<T>) -> Self {
        Estimator {
            kind,
            state,
            probability: T::one(),
        }
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    pub fn state(&self) -> &EstimatorState<T> {
        &self.state
    }

    pub fn snapshot(&self) -> Option<&SnapshotState<T>> {
        match &self.state {
            EstimatorState::Snapshot(s) => Some(s),
            _ => None,
        }
    }

    /// ASVR oracle probability `p_s`.
    pub fn probability(&self) -> T {
        self.probability
    }

    pub fn set_probability(&mut self, p: T) -> Result<(), EstimatorError> {
        if !(p > T::zero() && p <= T::one()) {
            return Err(EstimatorError::InvalidProbability(p.to_f64_lossy()));
        }
        self.probability = p;
        Ok(())
    }

    /// Moves the snapshot to `x`; returns the oracle calls consumed.
    pub fn refresh_snapshot(&mut self, problem: &LocalProblem<T>, x: &[T]) -> u64 {
        match &mut self.state {
            EstimatorState::Snapshot(s) => {
                s.refresh(problem, x);
                problem.num_components() as u64
            }
            _ => 0,
        }
    }

    /// Loopless refresh: with probability `1/K_i` move the snapshot to `x`.
    pub fn maybe_refresh<R: Rng + ?Sized>(
        &mut self,
        problem: &LocalProblem<T>,
        x: &[T],
        rng: &mut R,
    ) -> u64 {
        if self.kind != EstimatorKind::LooplessSvrg {
            return 0;
        }
        let p = 1.0 / problem.num_components() as f64;
        if rng.random_bool(p) {
            self.refresh_snapshot(problem, x)
        } else {
            0
        }
    }

    pub fn sample_outcome<R: Rng + ?Sized>(&self, problem: &LocalProblem<T>, rng: &mut R) -> Outcome {
        let kk = problem.num_components();
        match self.kind {
            EstimatorKind::Full => Outcome::Full,
            EstimatorKind::Sega => Outcome::Coordinate(rng.random_range(0..problem.dim())),
            EstimatorKind::AsvrInner => {
                let p = self.probability.to_f64_lossy();
                if p >= 1.0 || rng.random_bool(p) {
                    Outcome::Component(rng.random_range(0..kk))
                } else {
                    Outcome::Skip
                }
            }
            _ => Outcome::Component(rng.random_range(0..kk)),
        }
    }

    /// Exact outcome distribution; probabilities sum to one.
    pub fn outcomes(&self, problem: &LocalProblem<T>) -> Vec<(Outcome, T)> {
        let kk = problem.num_components();
        match self.kind {
            EstimatorKind::Full => vec![(Outcome::Full, T::one())],
            EstimatorKind::Sega => {
                let w = T::one() / T::of_usize(problem.dim());
                (0..problem.dim()).map(|j| (Outcome::Coordinate(j), w)).collect()
            }
            EstimatorKind::AsvrInner => {
                let p = self.probability;
                let w = p / T::of_usize(kk);
                let mut out: Vec<_> = (0..kk).map(|k| (Outcome::Component(k), w)).collect();
                if p < T::one() {
                    out.push((Outcome::Skip, T::one() - p));
                }
                out
            }
            _ => {
                let w = T::one() / T::of_usize(kk);
                (0..kk).map(|k| (Outcome::Component(k), w)).collect()
            }
        }
    }

    /// Gradient estimate for a fixed outcome, without touching the state.
    pub fn evaluate(&self, problem: &LocalProblem<T>, x: &[T], outcome: Outcome) -> (GradientSample<T>, Update<T>) {
        let n = problem.dim();
        let sample = |g, oracle_calls, sketched_calls| GradientSample {
            g,
            oracle_calls,
            sketched_calls,
        };
        match (&self.state, outcome) {
            (_, Outcome::Full) => (
                sample(problem.full_grad_unchecked(x), problem.num_components() as u64, 0),
                Update::None,
            ),
            (EstimatorState::Stateless, Outcome::Component(k)) => {
                let mut g = linalg::zeros(n);
                problem.add_component_grad(x, k, T::one(), &mut g);
                (sample(g, 1, 0), Update::None)
            }
            (EstimatorState::Saga(s), Outcome::Component(k)) => {
                let mut fresh = linalg::zeros(n);
                problem.add_component_grad(x, k, T::one(), &mut fresh);
                let g = fresh
                    .iter()
                    .zip(s.row(k))
                    .zip(&s.table_mean)
                    .map(|((&f, &old), &m)| f - old + m)
                    .collect();
                (sample(g, 1, 0), Update::SagaRow { k, fresh })
            }
            (EstimatorState::Snapshot(s), Outcome::Component(k)) => {
                let scale = if self.kind == EstimatorKind::AsvrInner {
                    T::one() / self.probability
                } else {
                    T::one()
                };
                let mut diff = linalg::zeros(n);
                problem.add_component_grad(x, k, T::one(), &mut diff);
                problem.add_component_grad(&s.snapshot_x, k, -T::one(), &mut diff);
                let g = diff
                    .iter()
                    .zip(&s.snapshot_full_grad)
                    .map(|(&d, &mu)| scale * d + mu)
                    .collect();
                (sample(g, 2, 0), Update::None)
            }
            (EstimatorState::Snapshot(s), Outcome::Skip) => {
                (sample(s.snapshot_full_grad.clone(), 0, 0), Update::None)
            }
            (EstimatorState::Sega(s), Outcome::Coordinate(j)) => {
                let kk = problem.num_components();
                let c = (0..kk)
                    .map(|k| problem.component_grad_coordinate_unchecked(x, k, j))
                    .sum::<T>()
                    / T::of_usize(kk);
                let mut g = s.h.clone();
                g[j] = s.h[j] + T::of_usize(n) * (c - s.h[j]);
                (sample(g, 0, 1), Update::SegaCoordinate { j, value: c })
            }
            (state, outcome) => unreachable!("outcome {outcome:?} cannot occur for state {state:?}"),
        }
    }

    pub fn commit(&mut self, update: Update<T>) {
        match (&mut self.state, update) {
            (_, Update::None) => {}
            (EstimatorState::Saga(s), Update::SagaRow { k, fresh }) => s.replace(k, &fresh),
            (EstimatorState::Sega(s), Update::SegaCoordinate { j, value }) => s.h[j] = value,
            (_, update) => unreachable!("update {update:?} does not match the estimator state"),
        }
        if let EstimatorState::Snapshot(s) = &mut self.state {
            s.inner_counter += 1;
        }
    }

    /// Draw, evaluate and commit one estimate.
    pub fn estimate<R: Rng + ?Sized>(
        &mut self,
        problem: &LocalProblem<T>,
        x: &[T],
        rng: &mut R,
    ) -> GradientSample<T> {
        let outcome = self.sample_outcome(problem, rng);
        let (sample, update) = self.evaluate(problem, x, outcome);
        self.commit(update);
        sample
    }

    fn check_enumerable(&self, problem: &LocalProblem<T>, x: &[T]) -> Result<(), EstimatorError> {
        if x.len() != problem.dim() {
            return Err(EstimatorError::DimensionMismatch {
                expected: problem.dim(),
                got: x.len(),
            });
        }
        if problem.num_components() > MAX_ENUM_COMPONENTS || problem.dim() > MAX_ENUM_DIM {
            return Err(EstimatorError::EnumerationTooLarge {
                components: problem.num_components(),
                dim: problem.dim(),
            });
        }
        Ok(())
    }
}

/// `E[g]` by enumerating the estimator's randomness.
pub fn exact_expectation<T: Scalar>(
    estimator: &Estimator<T>,
    problem: &LocalProblem<T>,
    x: &[T],
) -> Result<Vec<T>, EstimatorError> {
    estimator.check_enumerable(problem, x)?;
    let mut acc = linalg::zeros(problem.dim());
    for (outcome, p) in estimator.outcomes(problem) {
        let (s, _) = estimator.evaluate(problem, x, outcome);
        linalg::axpy(p, &s.g, &mut acc);
    }
    Ok(acc)
}

/// `E‖g - ∇f(ref_point)‖²` by enumeration.
pub fn exact_second_moment<T: Scalar>(
    estimator: &Estimator<T>,
    problem: &LocalProblem<T>,
    x: &[T],
    ref_point: &[T],
) -> Result<T, EstimatorError> {
    estimator.check_enumerable(problem, x)?;
    estimator.check_enumerable(problem, ref_point)?;
    let center = problem.full_grad_unchecked(ref_point);
    Ok(estimator
        .outcomes(problem)
        .into_iter()
        .map(|(outcome, p)| p * linalg::dist_sq(&estimator.evaluate(problem, x, outcome).0.g, &center))
        .sum())
}

/// Constants `(A, B, C, ϱ)` of the second-moment assumption for each
/// estimator, with the largest step size the generic bound admits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionConstants<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub varrho: T,
}

impl<T: Scalar> AssumptionConstants<T> {
    /// `(2A + 2BC/ϱ)^-1`
    pub fn max_step(&self) -> T {
        let tail = if self.b == T::zero() || self.c == T::zero() {
            T::zero()
        } else {
            T::of(2.0) * self.b * self.c / self.varrho
        };
        T::one() / (T::of(2.0) * self.a + tail)
    }
}

/// `None` for the epoch-based estimators whose analysis does not use a
/// per-iteration contraction (`SvrgPlusPlus` has `ϱ = 0`, ASVR is separate).
pub fn assumption_constants<T: Scalar>(
    kind: EstimatorKind,
    smoothness: T,
    components: usize,
    dim: usize,
) -> Option<AssumptionConstants<T>> {
    let l = smoothness;
    let k = T::of_usize(components);
    let n = T::of_usize(dim);
    let two = T::of(2.0);
    let c = |a, b, c, varrho| Some(AssumptionConstants { a, b, c, varrho });
    match kind {
        EstimatorKind::Full => c(l, T::zero(), T::zero(), T::one()),
        EstimatorKind::Sgd => c(two * l, T::zero(), T::zero(), T::one()),
        EstimatorKind::Saga | EstimatorKind::LooplessSvrg => c(two * l, two, l / k, T::one() / k),
        EstimatorKind::Sega => c(two * n * l, two * n, l / n, T::one() / n),
        EstimatorKind::SvrgPlusPlus | EstimatorKind::AsvrInner => None,
    }
}
