//! Reference solutions, optimality gaps and trace records.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::NodeState;
use crate::graph::Topology;
use crate::linalg;
use crate::problem::{LocalProblem, LossKind, Regularizer};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("Bregman gap {gap:e} is negative beyond rounding; the reference is inconsistent")]
    NegativeGap { gap: f64 },
    #[error("reference not converged after {iters} iterations (residual {residual:e})")]
    NotConverged { iters: usize, residual: f64 },
    #[error("reference has no dual certificate for node {node}")]
    MissingDualCertificate { node: usize },
    #[error("expected {expected} node vectors, got {got}")]
    NodeCountMismatch { expected: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Saddle point certificate `(x*, λ*, v*)`. Duals follow the sorted neighbor
/// order of the topology: `lambda_star[i][slot]` is `λ*_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution<T> {
    pub x_star: Vec<T>,
    pub lambda_star: Vec<Vec<Vec<T>>>,
    pub v_star: Vec<Vec<T>>,
    /// `max_i ‖v*_i + ∇f_i(x*) + Σ_j λ*_ji‖`
    pub kkt_residual: T,
}

impl<T: Scalar> ReferenceSolution<T> {
    /// Completes `(x*, v*)` with the minimum-norm antisymmetric dual
    /// certificate and records the stationarity residual.
    pub fn from_primal(
        problems: &[LocalProblem<T>],
        topology: &Topology,
        x_star: Vec<T>,
        v_star: Vec<Vec<T>>,
    ) -> Result<Self, MetricsError> {
        check_nodes(problems.len(), topology.num_nodes())?;
        check_nodes(problems.len(), v_star.len())?;
        for p in problems {
            check_dim(p.dim(), x_star.len())?;
        }
        for v in &v_star {
            check_dim(x_star.len(), v.len())?;
        }
        let slopes: Vec<Vec<T>> = problems
            .iter()
            .zip(&v_star)
            .map(|(p, v)| linalg::add(&p.full_grad_unchecked(&x_star), v))
            .collect();
        let lambda_star = laplacian_duals(topology, &slopes)?;
        let mut r = ReferenceSolution {
            x_star,
            lambda_star,
            v_star,
            kkt_residual: T::zero(),
        };
        r.kkt_residual = r.stationarity(problems, topology)?;
        Ok(r)
    }

    /// Recomputes `max_i ‖v*_i + ∇f_i(x*) + Σ_j λ*_ji‖`.
    pub fn stationarity(&self, problems: &[LocalProblem<T>], topology: &Topology) -> Result<T, MetricsError> {
        self.check_shape(topology)?;
        let mut worst = T::zero();
        for (i, p) in problems.iter().enumerate() {
            let mut r = linalg::add(&p.full_grad_unchecked(&self.x_star), &self.v_star[i]);
            for &j in topology.neighbors(i) {
                let back = topology.neighbor_slot(j, i).expect("adjacency is symmetric");
                linalg::axpy(T::one(), &self.lambda_star[j][back], &mut r);
            }
            worst = worst.max(linalg::norm(&r));
        }
        Ok(worst)
    }

    /// `max_{edges} ‖λ*_ij + λ*_ji‖`
    pub fn dual_antisymmetry(&self, topology: &Topology) -> Result<T, MetricsError> {
        self.check_shape(topology)?;
        Ok(topology
            .edges()
            .iter()
            .map(|&(i, j)| {
                let a = &self.lambda_star[i][topology.neighbor_slot(i, j).expect("edge")];
                let b = &self.lambda_star[j][topology.neighbor_slot(j, i).expect("edge")];
                linalg::norm(&linalg::add(a, b))
            })
            .fold(T::zero(), T::max))
    }

    pub fn check_shape(&self, topology: &Topology) -> Result<(), MetricsError> {
        check_nodes(topology.num_nodes(), self.lambda_star.len())?;
        check_nodes(topology.num_nodes(), self.v_star.len())?;
        for (i, duals) in self.lambda_star.iter().enumerate() {
            if duals.len() != topology.degree(i) {
                return Err(MetricsError::MissingDualCertificate { node: i });
            }
            for d in duals {
                check_dim(self.x_star.len(), d.len())?;
            }
        }
        Ok(())
    }
}

fn check_nodes(expected: usize, got: usize) -> Result<(), MetricsError> {
    if expected == got {
        Ok(())
    } else {
        Err(MetricsError::NodeCountMismatch { expected, got })
    }
}

fn check_dim(expected: usize, got: usize) -> Result<(), MetricsError> {
    if expected == got {
        Ok(())
    } else {
        Err(MetricsError::DimensionMismatch { expected, got })
    }
}

/// Solves `Σ_j λ_ij = b_i - mean(b)` with `λ_ij = u_i - u_j` through the
/// graph Laplacian (made nonsingular by adding `11ᵀ/V`).
fn laplacian_duals<T: Scalar>(topology: &Topology, slopes: &[Vec<T>]) -> Result<Vec<Vec<Vec<T>>>, MetricsError> {
    let v = topology.num_nodes();
    let n = slopes.first().map_or(0, |s| s.len());
    let shift = T::one() / T::of_usize(v);
    let mut lap = vec![shift; v * v];
    for i in 0..v {
        lap[i * v + i] += T::of_usize(topology.degree(i));
        for &j in topology.neighbors(i) {
            lap[i * v + j] -= T::one();
        }
    }
    let mut u = vec![linalg::zeros::<T>(n); v];
    for c in 0..n {
        let b: Vec<T> = slopes.iter().map(|s| s[c]).collect();
        let mean = b.iter().copied().sum::<T>() / T::of_usize(v);
        let rhs: Vec<T> = b.iter().map(|&x| x - mean).collect();
        let sol = linalg::solve_spd(&lap, &rhs)
            .ok_or_else(|| MetricsError::InvalidParameter("graph Laplacian system is singular".into()))?;
        for (ui, s) in u.iter_mut().zip(sol) {
            ui[c] = s;
        }
    }
    Ok((0..v)
        .map(|i| {
            topology
                .neighbors(i)
                .iter()
                .map(|&j| linalg::sub(&u[i], &u[j]))
                .collect()
        })
        .collect())
}

/// Solves the network problem `min_x Σ_i f_i(x) + h_i(x)` to stationarity
/// `tol` and returns a saddle certificate.
///
/// Unregularized least squares uses the aggregate normal equations. Every
/// other case runs accelerated proximal gradient (with adaptive restart) on
/// the sum when all nodes share one regularizer, and the exact-gradient
/// primal-dual iteration otherwise.
pub fn compute_reference<T: Scalar>(
    problems: &[LocalProblem<T>],
    topology: &Topology,
    tol: T,
    max_iters: usize,
) -> Result<ReferenceSolution<T>, MetricsError> {
    if tol.is_nan() || tol <= T::zero() {
        return Err(MetricsError::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    check_nodes(topology.num_nodes(), problems.len())?;
    let n = problems[0].dim();
    for p in problems {
        check_dim(n, p.dim())?;
    }
    if problems
        .iter()
        .all(|p| matches!(p.loss(), LossKind::LeastSquares) && *p.regularizer() == Regularizer::Zero)
    {
        if let Some(x) = least_squares_minimizer(problems) {
            let zeros = vec![linalg::zeros(n); problems.len()];
            let r = ReferenceSolution::from_primal(problems, topology, x, zeros)?;
            if r.kkt_residual <= tol {
                return Ok(r);
            }
        }
    }
    let shared = problems.iter().all(|p| p.regularizer() == problems[0].regularizer());
    let (x, v) = if shared {
        centralized_prox_gradient(problems, tol, max_iters)?
    } else {
        primal_dual_solve(problems, topology, tol, max_iters)?
    };
    let r = ReferenceSolution::from_primal(problems, topology, x, v)?;
    if r.kkt_residual <= tol {
        Ok(r)
    } else {
        Err(MetricsError::NotConverged {
            iters: max_iters,
            residual: r.kkt_residual.to_f64_lossy(),
        })
    }
}

fn least_squares_minimizer<T: Scalar>(problems: &[LocalProblem<T>]) -> Option<Vec<T>> {
    let n = problems[0].dim();
    let mut a = linalg::zeros::<T>(n * n);
    let mut b = linalg::zeros::<T>(n);
    for p in problems {
        let w = T::one() / T::of_usize(p.num_components());
        for (d, &c) in p.dataset().rows().zip(p.dataset().targets()) {
            for r in 0..n {
                for s in 0..n {
                    a[r * n + s] += w * d[r] * d[s];
                }
                b[r] += w * c * d[r];
            }
        }
    }
    linalg::solve_spd(&a, &b)
}

fn total_grad<T: Scalar>(problems: &[LocalProblem<T>], x: &[T]) -> Vec<T> {
    let mut g = linalg::zeros(x.len());
    for p in problems {
        linalg::axpy(T::one(), &p.full_grad_unchecked(x), &mut g);
    }
    g
}

/// FISTA with gradient restart on `Σ f_i + V·h`. The prox certificate of the
/// last step is split evenly over nodes.
fn centralized_prox_gradient<T: Scalar>(
    problems: &[LocalProblem<T>],
    tol: T,
    max_iters: usize,
) -> Result<(Vec<T>, Vec<Vec<T>>), MetricsError> {
    let v = problems.len();
    let n = problems[0].dim();
    let reg = problems[0].regularizer();
    let nodes = T::of_usize(v);
    let lip: T = problems.iter().map(|p| p.smoothness()).sum();
    let step = T::one() / lip;
    let mut x = linalg::zeros::<T>(n);
    let mut y = x.clone();
    let mut theta = T::one();
    let mut residual = T::infinity();
    for _ in 0..max_iters {
        let gy = total_grad(problems, &y);
        let z: Vec<T> = y.iter().zip(&gy).map(|(&a, &g)| a - step * g).collect();
        let x_new = reg.prox(&z, step * nodes);
        let gx = total_grad(problems, &x_new);
        let cert: Vec<T> = z.iter().zip(&x_new).map(|(&a, &b)| (a - b) / step).collect();
        residual = linalg::norm(&linalg::add(&gx, &cert)) / nodes;
        if residual <= tol * T::of(0.25) {
            let vs = vec![cert.iter().map(|&c| c / nodes).collect(); v];
            return Ok((x_new, vs));
        }
        let restart = linalg::dot(&linalg::sub(&y, &x_new), &linalg::sub(&x_new, &x)) > T::zero();
        let theta_new = if restart {
            T::one()
        } else {
            (T::one() + (T::one() + T::of(4.0) * theta * theta).sqrt()) / T::of(2.0)
        };
        let mom = if restart { T::zero() } else { (theta - T::one()) / theta_new };
        y = x_new
            .iter()
            .zip(&x)
            .map(|(&a, &b)| a + mom * (a - b))
            .collect();
        x = x_new;
        theta = theta_new;
    }
    Err(MetricsError::NotConverged {
        iters: max_iters,
        residual: residual.to_f64_lossy(),
    })
}

/// Exact-gradient primal-dual iteration with `η_i = 1/(2L_i)`, `ρ = mean L_i`.
fn primal_dual_solve<T: Scalar>(
    problems: &[LocalProblem<T>],
    topology: &Topology,
    tol: T,
    max_iters: usize,
) -> Result<(Vec<T>, Vec<Vec<T>>), MetricsError> {
    use crate::engine::{FlatRun, RunConfig};
    use crate::estimators::EstimatorKind;
    let rho = problems.iter().map(|p| p.smoothness()).sum::<T>() / T::of_usize(problems.len());
    let mut cfg = RunConfig::new(EstimatorKind::Full, rho, max_iters);
    cfg.threads = Some(1);
    let mut run = FlatRun::new(problems, topology, &cfg).map_err(|e| MetricsError::InvalidParameter(e.to_string()))?;
    let mut k = KktResiduals::default();
    for it in 0..max_iters {
        run.step().map_err(|e| MetricsError::InvalidParameter(e.to_string()))?;
        if it % 10 == 9 {
            k = kkt_residuals(run.states(), problems, topology)?;
            if k.stationarity <= tol * T::of(0.25) && k.consensus <= tol * T::of(0.25) {
                let xs = linalg::mean(run.iterates(), problems[0].dim());
                let vs = run.states().iter().map(|s| s.subgradient.clone()).collect();
                return Ok((xs, vs));
            }
        }
    }
    Err(MetricsError::NotConverged {
        iters: max_iters,
        residual: k.stationarity.max(k.consensus).to_f64_lossy(),
    })
}

/// `F_i(x*)` and `∇f_i(x*) + v*_i` per node, so the gap of many iterates
/// costs one objective evaluation per node each.
#[derive(Debug, Clone, PartialEq)]
pub struct BregmanAnchor<T> {
    x_star: Vec<T>,
    values: Vec<T>,
    slopes: Vec<Vec<T>>,
}

impl<T: Scalar> BregmanAnchor<T> {
    pub fn new(problems: &[LocalProblem<T>], reference: &ReferenceSolution<T>) -> Result<Self, MetricsError> {
        check_nodes(problems.len(), reference.v_star.len())?;
        let x = &reference.x_star;
        let mut values = Vec::with_capacity(problems.len());
        let mut slopes = Vec::with_capacity(problems.len());
        for (p, v) in problems.iter().zip(&reference.v_star) {
            check_dim(p.dim(), x.len())?;
            check_dim(p.dim(), v.len())?;
            values.push(p.value_unchecked(x) + p.regularizer().value(x));
            slopes.push(linalg::add(&p.full_grad_unchecked(x), v));
        }
        Ok(BregmanAnchor {
            x_star: x.clone(),
            values,
            slopes,
        })
    }

    /// `Σ_i D_{f_i+h_i}(x_i, x*)` with the subgradient `v*_i`.
    pub fn gap<'b, I>(&self, xs: I, problems: &[LocalProblem<T>]) -> Result<T, MetricsError>
    where
        I: ExactSizeIterator<Item = &'b [T]>,
        T: 'b,
    {
        check_nodes(self.values.len(), xs.len())?;
        let mut total = T::zero();
        let mut scale = T::zero();
        for (i, x) in xs.enumerate() {
            check_dim(self.x_star.len(), x.len())?;
            let p = &problems[i];
            let fx = p.value_unchecked(x) + p.regularizer().value(x);
            if fx.is_infinite() {
                return Ok(T::infinity());
            }
            let lin = linalg::dot(&self.slopes[i], &linalg::sub(x, &self.x_star));
            total += fx - self.values[i] - lin;
            scale += fx.abs() + self.values[i].abs() + lin.abs();
        }
        let slack = T::of(1e-10).max(T::of(64.0) * T::epsilon() * scale);
        if total >= T::zero() || total.is_nan() {
            Ok(total)
        } else if total >= -slack {
            Ok(T::zero())
        } else {
            Err(MetricsError::NegativeGap {
                gap: total.to_f64_lossy(),
            })
        }
    }
}

/// Cumulative Bregman divergence of the node iterates from the reference.
/// Values within rounding below zero are clamped to zero.
pub fn bregman_gap<'b, T, I>(xs: I, problems: &[LocalProblem<T>], reference: &ReferenceSolution<T>) -> Result<T, MetricsError>
where
    T: Scalar,
    I: ExactSizeIterator<Item = &'b [T]>,
{
    BregmanAnchor::new(problems, reference)?.gap(xs, problems)
}

/// `max_{(i,j)∈E} ‖x_i − x_j‖`; zero without edges.
pub fn consensus_residual<'b, T, I>(xs: I, topology: &Topology) -> T
where
    T: Scalar,
    I: Iterator<Item = &'b [T]>,
{
    let xs: Vec<&[T]> = xs.collect();
    topology
        .edges()
        .iter()
        .map(|&(i, j)| linalg::dist(xs[i], xs[j]))
        .fold(T::zero(), T::max)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KktResiduals<T> {
    pub stationarity: T,
    pub dual_antisymmetry: T,
    pub consensus: T,
}

/// Residuals of the saddle point conditions at the given node states, using
/// each state's prox certificate as `v_i`.
pub fn kkt_residuals<T: Scalar>(
    states: &[NodeState<T>],
    problems: &[LocalProblem<T>],
    topology: &Topology,
) -> Result<KktResiduals<T>, MetricsError> {
    check_nodes(topology.num_nodes(), states.len())?;
    check_nodes(topology.num_nodes(), problems.len())?;
    let mut stationarity = T::zero();
    for (i, (s, p)) in states.iter().zip(problems).enumerate() {
        if s.duals.len() != topology.degree(i) {
            return Err(MetricsError::MissingDualCertificate { node: i });
        }
        let mut r = linalg::add(&s.subgradient, &p.full_grad_unchecked(&s.x));
        for &j in topology.neighbors(i) {
            let back = topology.neighbor_slot(j, i).expect("adjacency is symmetric");
            linalg::axpy(T::one(), &states[j].duals[back], &mut r);
        }
        stationarity = stationarity.max(linalg::norm(&r));
    }
    let dual_antisymmetry = topology
        .edges()
        .iter()
        .map(|&(i, j)| {
            let a = &states[i].duals[topology.neighbor_slot(i, j).expect("edge")];
            let b = &states[j].duals[topology.neighbor_slot(j, i).expect("edge")];
            linalg::norm(&linalg::add(a, b))
        })
        .fold(T::zero(), T::max);
    Ok(KktResiduals {
        stationarity,
        dual_antisymmetry,
        consensus: consensus_residual(states.iter().map(|s| s.x.as_slice()), topology),
    })
}

/// `Ψ = (1/2ρ) Σ_i Σ_{j∈N_i} ‖ρ(x_i − x*) − (λ_ij − λ*_ij)‖²`
pub fn psi<T: Scalar>(states: &[NodeState<T>], reference: &ReferenceSolution<T>, rho: T) -> Result<T, MetricsError> {
    check_nodes(reference.lambda_star.len(), states.len())?;
    let mut total = T::zero();
    for (i, s) in states.iter().enumerate() {
        let stars = &reference.lambda_star[i];
        if stars.len() != s.duals.len() {
            return Err(MetricsError::MissingDualCertificate { node: i });
        }
        let dx = linalg::sub(&s.x, &reference.x_star);
        for (lam, star) in s.duals.iter().zip(stars) {
            total += dx
                .iter()
                .zip(lam)
                .zip(star)
                .map(|((&d, &l), &ls)| {
                    let e = rho * d - (l - ls);
                    e * e
                })
                .sum::<T>();
        }
    }
    Ok(total / (T::of(2.0) * rho))
}

/// `|(Ψ⁺ − Ψ) + 2 Σ_i Σ_j ⟨x_i⁺ − x*, λ_ij⁺ − λ*_ij⟩|`, zero up to rounding
/// whenever `next` came from the dual update applied to `prev`.
pub fn three_point_identity_check<T: Scalar>(
    prev: &[NodeState<T>],
    next: &[NodeState<T>],
    reference: &ReferenceSolution<T>,
    rho: T,
) -> Result<T, MetricsError> {
    let delta = psi(next, reference, rho)? - psi(prev, reference, rho)?;
    let mut cross = T::zero();
    for (i, s) in next.iter().enumerate() {
        let dx = linalg::sub(&s.x, &reference.x_star);
        for (lam, star) in s.duals.iter().zip(&reference.lambda_star[i]) {
            cross += linalg::dot(&dx, &linalg::sub(lam, star));
        }
    }
    Ok((delta + T::of(2.0) * cross).abs())
}

/// `σ_i² = (1/K_i) Σ_k ‖∇f_i(x*, ξ_k) − ∇f_i(x*)‖²`
pub fn sigma_at_reference<T: Scalar>(problem: &LocalProblem<T>, reference: &ReferenceSolution<T>) -> Result<T, MetricsError> {
    let x = &reference.x_star;
    check_dim(problem.dim(), x.len())?;
    let mean = problem.full_grad_unchecked(x);
    let mut g = linalg::zeros(x.len());
    let mut total = T::zero();
    for k in 0..problem.num_components() {
        g.iter_mut().for_each(|v| *v = T::zero());
        problem.add_component_grad(x, k, T::one(), &mut g);
        total += linalg::dist_sq(&g, &mean);
    }
    Ok(total / T::of_usize(problem.num_components()))
}

/// The three quantities bounded by the initialization constant `W₁`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct W1Diagnostics<T> {
    pub primal: T,
    pub dual: T,
    pub bregman: T,
}

impl<T: Scalar> W1Diagnostics<T> {
    pub fn max(&self) -> T {
        self.primal.max(self.dual).max(self.bregman)
    }
}

/// Maxima over nodes and edges of `‖x_i − x*‖²`, `‖λ_ij − λ*_ij‖²` and
/// `D_{f_i+h_i}(x_i, x*)`.
pub fn w1_diagnostics<T: Scalar>(
    states: &[NodeState<T>],
    problems: &[LocalProblem<T>],
    reference: &ReferenceSolution<T>,
) -> Result<W1Diagnostics<T>, MetricsError> {
    check_nodes(reference.lambda_star.len(), states.len())?;
    let anchor = BregmanAnchor::new(problems, reference)?;
    let mut d = W1Diagnostics {
        primal: T::zero(),
        dual: T::zero(),
        bregman: T::zero(),
    };
    for (i, s) in states.iter().enumerate() {
        d.primal = d.primal.max(linalg::dist_sq(&s.x, &reference.x_star));
        for (lam, star) in s.duals.iter().zip(&reference.lambda_star[i]) {
            d.dual = d.dual.max(linalg::dist_sq(lam, star));
        }
        let p = &problems[i];
        let fx = p.value_unchecked(&s.x) + p.regularizer().value(&s.x);
        let lin = linalg::dot(&anchor.slopes[i], &linalg::sub(&s.x, &reference.x_star));
        d.bregman = d.bregman.max(fx - anchor.values[i] - lin);
    }
    Ok(d)
}

/// One logged iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow<T> {
    pub iter: u64,
    pub epoch: Option<u64>,
    pub oracle_calls: u64,
    pub sketched_calls: u64,
    pub comm_rounds: u64,
    /// NaN when the run has no reference.
    pub bregman_gap: T,
    pub consensus_residual: T,
    pub objective: T,
}

/// Snapshot quality at the end of an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord<T> {
    pub epoch: u64,
    pub iter: u64,
    pub oracle_calls: u64,
    pub bregman_gap: T,
    pub objective: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace<T> {
    pub rows: Vec<TraceRow<T>>,
    pub epochs: Vec<EpochRecord<T>>,
}

impl<T> Default for Trace<T> {
    fn default() -> Self {
        Trace {
            rows: Vec::new(),
            epochs: Vec::new(),
        }
    }
}

impl<T: Scalar> Trace<T> {
    pub fn last(&self) -> Option<&TraceRow<T>> {
        self.rows.last()
    }

    /// Gap of the last row whose cumulative oracle count is within `budget`.
    pub fn gap_at_budget(&self, budget: u64) -> Option<T> {
        self.rows
            .iter()
            .take_while(|r| r.oracle_calls <= budget)
            .last()
            .map(|r| r.bregman_gap)
    }
}
