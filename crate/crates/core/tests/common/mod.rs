//! Instances and independent oracles shared by the integration tests.
#![allow(dead_code)]

use depd::engine::NodeState;
use depd::graph::Topology;
use depd::problem::{synth_dataset, LocalProblem, LossKind, Regularizer, SynthKind};
use nalgebra::{DMatrix, DVector};

/// Desk-scale logistic instance: 10 nodes, 20 edges, 100 samples per node,
/// dimension 20.
pub fn desk_logistic(seed: u64) -> (Vec<LocalProblem<f64>>, Topology) {
    let v = 10;
    let ds = synth_dataset::<f64>(20, 100 * v, SynthKind::SeparableLogistic { label_noise: 0.05 }, seed).unwrap();
    let problems = ds
        .partition(v, seed)
        .unwrap()
        .into_iter()
        .map(|d| LocalProblem::new(d, LossKind::LogisticL2 { tau: 0.0014 }, Regularizer::Zero).unwrap())
        .collect();
    (problems, Topology::random_connected(v, 20, seed).unwrap())
}

/// Desk-scale least squares: same graph shape, dimension `dim`.
pub fn desk_least_squares(seed: u64, dim: usize) -> (Vec<LocalProblem<f64>>, Topology) {
    let v = 10;
    let ds = synth_dataset::<f64>(dim, 100 * v, SynthKind::GaussianLeastSquares { noise: 0.1 }, seed).unwrap();
    let problems = ds
        .partition(v, seed)
        .unwrap()
        .into_iter()
        .map(|d| LocalProblem::new(d, LossKind::LeastSquares, Regularizer::Zero).unwrap())
        .collect();
    (problems, Topology::random_connected(v, 20, seed).unwrap())
}

/// Five-node ring, 6 least-squares samples per node in dimension 3.
pub fn ring_quadratic() -> (Vec<LocalProblem<f64>>, Topology) {
    let ds = synth_dataset::<f64>(3, 30, SynthKind::GaussianLeastSquares { noise: 0.3 }, 17).unwrap();
    let problems = ds
        .partition(5, 2)
        .unwrap()
        .into_iter()
        .map(|d| LocalProblem::new(d, LossKind::LeastSquares, Regularizer::Zero).unwrap())
        .collect();
    (problems, Topology::ring(5).unwrap())
}

/// Minimizer of `Σ_i ½‖D_i x − c_i‖²` from the normal equations.
pub fn least_squares_closed_form(problems: &[LocalProblem<f64>]) -> Vec<f64> {
    let n = problems[0].dim();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for p in problems {
        let ds = p.dataset();
        for k in 0..ds.len() {
            let d = DVector::from_column_slice(ds.row(k));
            a += &d * d.transpose();
            b += &d * ds.target(k);
        }
    }
    a.cholesky().expect("normal matrix is positive definite").solve(&b).iter().copied().collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x.ln() / n, b + y.ln() / n));
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(x, y) in points {
        let dx = x.ln() - mx;
        sxy += dx * (y.ln() - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// The update written as a proximal step on `η` followed by the dual step:
/// `x⁺ = prox_{ηh}(x − ηg + η Σ_j λ_ij⁺)` with `λ_ij⁺ = −λ_ji + ρ(x_j − x⁺)`.
/// The primal equation is implicit in `x⁺`; each coordinate of
/// `x ↦ x − prox_{ηh}(c − ηρ·deg·x)` is increasing, so bisection finds it.
pub fn two_stage_step(
    i: usize,
    states: &[NodeState<f64>],
    topology: &Topology,
    g: &[f64],
    eta: f64,
    rho: f64,
    reg: &Regularizer<f64>,
) -> NodeState<f64> {
    let x = &states[i].x;
    let n = x.len();
    let nbrs = topology.neighbors(i);
    let deg = nbrs.len() as f64;
    let incoming: Vec<&[f64]> = nbrs
        .iter()
        .map(|&j| states[j].duals[topology.neighbor_slot(j, i).unwrap()].as_slice())
        .collect();
    let mut c: Vec<f64> = (0..n).map(|k| x[k] - eta * g[k]).collect();
    for (&j, lji) in nbrs.iter().zip(&incoming) {
        for k in 0..n {
            c[k] += eta * (-lji[k] + rho * states[j].x[k]);
        }
    }
    let residual = |z: &[f64]| -> Vec<f64> {
        let arg: Vec<f64> = (0..n).map(|k| c[k] - eta * rho * deg * z[k]).collect();
        let p = reg.prox(&arg, eta);
        (0..n).map(|k| z[k] - p[k]).collect()
    };
    let bound = 1e3 * (1.0 + c.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let mut lo = vec![-bound; n];
    let mut hi = vec![bound; n];
    for _ in 0..2000 {
        let mid: Vec<f64> = (0..n).map(|k| 0.5 * (lo[k] + hi[k])).collect();
        let r = residual(&mid);
        let mut moved = false;
        for k in 0..n {
            if mid[k] == lo[k] || mid[k] == hi[k] {
                continue;
            }
            moved = true;
            if r[k] > 0.0 {
                hi[k] = mid[k];
            } else {
                lo[k] = mid[k];
            }
        }
        if !moved {
            break;
        }
    }
    let x_new: Vec<f64> = (0..n).map(|k| 0.5 * (lo[k] + hi[k])).collect();
    let duals = nbrs
        .iter()
        .zip(&incoming)
        .map(|(&j, lji)| (0..n).map(|k| -lji[k] + rho * (states[j].x[k] - x_new[k])).collect())
        .collect();
    NodeState {
        x: x_new,
        duals,
        subgradient: vec![0.0; n],
    }
}
