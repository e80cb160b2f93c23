//! Per-node finite-sum losses, regularizers and data ingestion.

mod dataset;
mod regularizer;

pub use dataset::{load_libsvm, parse_libsvm, synth_dataset, Dataset, LabelMode, SynthKind};
pub use regularizer::Regularizer;

use thiserror::Error;

use crate::linalg;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: feature index {index} exceeds dimension {dim}")]
    InconsistentDimension { line: usize, index: usize, dim: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Smooth per-component loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind<T> {
    /// `log(1 + exp(-c d·x))`
    Logistic,
    /// `log(1 + exp(-c d·x)) + (τ/2)‖x‖²`
    LogisticL2 { tau: T },
    /// `½(d·x - c)²`
    LeastSquares,
}

impl<T: Scalar> LossKind<T> {
    pub fn logistic_l2(tau: T) -> Result<Self, ProblemError> {
        if tau >= T::zero() && tau.is_finite() {
            Ok(LossKind::LogisticL2 { tau })
        } else {
            Err(ProblemError::InvalidParameter(format!(
                "tau must be finite and nonnegative, got {tau}"
            )))
        }
    }

    fn tau(&self) -> T {
        match self {
            LossKind::LogisticL2 { tau } => *tau,
            _ => T::zero(),
        }
    }

    /// Derivative of the loss with respect to the linear score `d·x`.
    fn score_derivative(&self, score: T, target: T) -> T {
        match self {
            LossKind::LeastSquares => score - target,
            _ => -target * (-target * score).sigmoid(),
        }
    }

    fn score_value(&self, score: T, target: T) -> T {
        match self {
            LossKind::LeastSquares => {
                let r = score - target;
                T::of(0.5) * r * r
            }
            _ => (-target * score).softplus(),
        }
    }
}

/// `f_i(x) = (1/K) Σ_k f(x; d_k, c_k)` plus a prox-friendly `h_i`.
#[derive(Debug, Clone)]
pub struct LocalProblem<T> {
    dataset: Dataset<T>,
    loss: LossKind<T>,
    regularizer: Regularizer<T>,
    smoothness: T,
    component_smoothness: Vec<T>,
}

impl<T: Scalar> LocalProblem<T> {
    pub fn new(
        dataset: Dataset<T>,
        loss: LossKind<T>,
        regularizer: Regularizer<T>,
    ) -> Result<Self, ProblemError> {
        if let Some(d) = regularizer.dim() {
            if d != dataset.dim() {
                return Err(ProblemError::DimensionMismatch {
                    expected: dataset.dim(),
                    got: d,
                });
            }
        }
        let (smoothness, component_smoothness) = smoothness_constants(&dataset, &loss)?;
        Ok(LocalProblem {
            dataset,
            loss,
            regularizer,
            smoothness,
            component_smoothness,
        })
    }

    /// Replaces `L_i` used by step-size rules. Values below the component
    /// maximum are accepted.
    pub fn with_smoothness(mut self, l: T) -> Result<Self, ProblemError> {
        if !(l > T::zero() && l.is_finite()) {
            return Err(ProblemError::InvalidParameter(format!(
                "smoothness must be positive, got {l}"
            )));
        }
        self.smoothness = l;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim()
    }

    pub fn num_components(&self) -> usize {
        self.dataset.len()
    }

    pub fn dataset(&self) -> &Dataset<T> {
        &self.dataset
    }

    pub fn loss(&self) -> &LossKind<T> {
        &self.loss
    }

    pub fn regularizer(&self) -> &Regularizer<T> {
        &self.regularizer
    }

    pub fn smoothness(&self) -> T {
        self.smoothness
    }

    pub fn component_smoothness(&self) -> &[T] {
        &self.component_smoothness
    }

    fn check(&self, x: &[T], k: usize) -> Result<(), ProblemError> {
        if x.len() != self.dim() {
            return Err(ProblemError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if k >= self.num_components() {
            return Err(ProblemError::IndexOutOfRange {
                index: k,
                len: self.num_components(),
            });
        }
        Ok(())
    }

    fn check_dim(&self, x: &[T]) -> Result<(), ProblemError> {
        if x.len() == self.dim() {
            Ok(())
        } else {
            Err(ProblemError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            })
        }
    }

    pub fn component_value(&self, x: &[T], k: usize) -> Result<T, ProblemError> {
        self.check(x, k)?;
        Ok(self.component_value_unchecked(x, k))
    }

    fn component_value_unchecked(&self, x: &[T], k: usize) -> T {
        let score = linalg::dot(self.dataset.row(k), x);
        let mut v = self.loss.score_value(score, self.dataset.target(k));
        let tau = self.loss.tau();
        if tau > T::zero() {
            v += T::of(0.5) * tau * linalg::norm_sq(x);
        }
        v
    }

    pub fn component_grad(&self, x: &[T], k: usize) -> Result<Vec<T>, ProblemError> {
        self.check(x, k)?;
        let mut out = linalg::zeros(self.dim());
        self.add_component_grad(x, k, T::one(), &mut out);
        Ok(out)
    }

    pub fn component_grad_coordinate(&self, x: &[T], k: usize, j: usize) -> Result<T, ProblemError> {
        self.check(x, k)?;
        if j >= self.dim() {
            return Err(ProblemError::IndexOutOfRange {
                index: j,
                len: self.dim(),
            });
        }
        Ok(self.component_grad_coordinate_unchecked(x, k, j))
    }

    pub(crate) fn component_grad_coordinate_unchecked(&self, x: &[T], k: usize, j: usize) -> T {
        let d = self.dataset.row(k);
        let s = self
            .loss
            .score_derivative(linalg::dot(d, x), self.dataset.target(k));
        s * d[j] + self.loss.tau() * x[j]
    }

    /// `out += alpha ∇f_k(x)`
    pub(crate) fn add_component_grad(&self, x: &[T], k: usize, alpha: T, out: &mut [T]) {
        let d = self.dataset.row(k);
        let s = self
            .loss
            .score_derivative(linalg::dot(d, x), self.dataset.target(k));
        linalg::axpy(alpha * s, d, out);
        let tau = self.loss.tau();
        if tau > T::zero() {
            linalg::axpy(alpha * tau, x, out);
        }
    }

    /// Mean of the component gradients.
    pub fn full_grad(&self, x: &[T]) -> Result<Vec<T>, ProblemError> {
        self.check_dim(x)?;
        Ok(self.full_grad_unchecked(x))
    }

    pub(crate) fn full_grad_unchecked(&self, x: &[T]) -> Vec<T> {
        let mut out = linalg::zeros(self.dim());
        for k in 0..self.num_components() {
            self.add_component_grad(x, k, T::one(), &mut out);
        }
        linalg::scale(T::one() / T::of_usize(self.num_components()), &mut out);
        out
    }

    /// `f_i(x)`
    pub fn value(&self, x: &[T]) -> Result<T, ProblemError> {
        self.check_dim(x)?;
        Ok(self.value_unchecked(x))
    }

    pub(crate) fn value_unchecked(&self, x: &[T]) -> T {
        let s: T = (0..self.num_components())
            .map(|k| self.component_value_unchecked(x, k))
            .sum();
        s / T::of_usize(self.num_components())
    }

    /// `f_i(x) + h_i(x)`
    pub fn objective(&self, x: &[T]) -> Result<T, ProblemError> {
        Ok(self.value(x)? + self.regularizer.value(x))
    }
}

/// `(L_i, [L_k])`: logistic `‖d_k‖²/4 + τ`, least squares `‖d_k‖²`.
pub fn smoothness_constants<T: Scalar>(
    dataset: &Dataset<T>,
    loss: &LossKind<T>,
) -> Result<(T, Vec<T>), ProblemError> {
    if dataset.is_empty() {
        return Err(ProblemError::EmptyDataset);
    }
    let per: Vec<T> = dataset
        .rows()
        .map(|d| match loss {
            LossKind::LeastSquares => linalg::norm_sq(d),
            _ => linalg::norm_sq(d) / T::of(4.0) + loss.tau(),
        })
        .collect();
    let max = per.iter().copied().fold(T::zero(), T::max);
    // A zero feature row under an unregularized loss is constant; any
    // positive constant bounds its curvature.
    let max = if max > T::zero() { max } else { T::min_positive_value() };
    Ok((max, per))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn problem(rows: &[Vec<f64>], targets: Vec<f64>, loss: LossKind<f64>) -> LocalProblem<f64> {
        LocalProblem::new(Dataset::from_rows(rows, targets).unwrap(), loss, Regularizer::Zero).unwrap()
    }

    fn random_problem(seed: u64, loss: LossKind<f64>, k: usize, n: usize) -> LocalProblem<f64> {
        let kind = match loss {
            LossKind::LeastSquares => SynthKind::gaussian_least_squares(),
            _ => SynthKind::separable_logistic(),
        };
        LocalProblem::new(synth_dataset(n, k, kind, seed).unwrap(), loss, Regularizer::Zero).unwrap()
    }

    fn losses() -> [LossKind<f64>; 3] {
        [LossKind::Logistic, LossKind::LogisticL2 { tau: 0.3 }, LossKind::LeastSquares]
    }

    #[test]
    fn logistic_at_zero_margin() {
        let p = problem(&[vec![1.5, -2.0]], vec![-1.0], LossKind::Logistic);
        assert!((p.component_value(&[0.0, 0.0], 0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(p.component_grad(&[0.0, 0.0], 0).unwrap(), vec![0.75, -1.0]);
    }

    #[test]
    fn large_margin_tends_to_regularizer() {
        let p = problem(&[vec![1.0]], vec![1.0], LossKind::LogisticL2 { tau: 0.5 });
        let x = [1.0e3];
        assert_eq!(p.component_value(&x, 0).unwrap(), 0.25e6);
        let q = problem(&[vec![1.0]], vec![-1.0], LossKind::Logistic);
        assert!((q.component_value(&x, 0).unwrap() - 1.0e3).abs() < 1e-9);
    }

    #[test]
    fn zero_feature_gives_tau_x() {
        let p = problem(&[vec![0.0, 0.0]], vec![1.0], LossKind::LogisticL2 { tau: 0.25 });
        assert_eq!(p.component_grad(&[2.0, -4.0], 0).unwrap(), vec![0.5, -1.0]);
    }

    #[test]
    fn least_squares_coordinate_at_origin() {
        let p = problem(&[vec![2.0, 3.0]], vec![1.5], LossKind::LeastSquares);
        assert_eq!(p.component_grad_coordinate(&[0.0, 0.0], 0, 1).unwrap(), -4.5);
        assert!(matches!(
            p.component_grad_coordinate(&[0.0, 0.0], 0, 2),
            Err(ProblemError::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn argument_errors() {
        let p = problem(&[vec![1.0, 0.0]], vec![1.0], LossKind::Logistic);
        assert!(matches!(p.component_value(&[0.0], 0), Err(ProblemError::DimensionMismatch { .. })));
        assert!(matches!(p.component_grad(&[0.0, 0.0], 1), Err(ProblemError::IndexOutOfRange { .. })));
        assert!(p.full_grad(&[0.0; 3]).is_err());
        assert!(LossKind::logistic_l2(-1.0).is_err());
        let boxed = Regularizer::boxed(vec![0.0; 3], vec![1.0; 3]).unwrap();
        let ds = Dataset::from_rows(&[vec![1.0, 0.0]], vec![1.0]).unwrap();
        assert!(LocalProblem::new(ds, LossKind::Logistic, boxed).is_err());
    }

    #[test]
    fn smoothness_examples() {
        let ds = Dataset::from_rows(&[vec![2.0, 0.0]], vec![1.0]).unwrap();
        assert_eq!(smoothness_constants(&ds, &LossKind::Logistic).unwrap().0, 1.0);
        let (l, per) = smoothness_constants(&ds, &LossKind::LogisticL2 { tau: 0.0014 }).unwrap();
        assert_eq!(l, 1.0014);
        assert_eq!(per, vec![1.0014]);
        assert_eq!(smoothness_constants(&ds, &LossKind::LeastSquares).unwrap().0, 4.0);
    }

    #[test]
    fn full_grad_is_component_mean() {
        let p = random_problem(3, LossKind::LogisticL2 { tau: 0.1 }, 3, 4);
        let x = [0.3, -0.2, 0.9, 0.05];
        let mut expect = vec![0.0; 4];
        for k in 0..3 {
            for (e, g) in expect.iter_mut().zip(p.component_grad(&x, k).unwrap()) {
                *e += g / 3.0;
            }
        }
        assert!(linalg::max_abs_diff(&expect, &p.full_grad(&x).unwrap()) < 1e-15);
        let single = random_problem(1, LossKind::Logistic, 1, 3);
        assert_eq!(single.full_grad(&x[..3]).unwrap(), single.component_grad(&x[..3], 0).unwrap());
    }

    #[test]
    fn least_squares_normal_equations_zero_gradient() {
        let p = random_problem(11, LossKind::LeastSquares, 12, 3);
        let a = nalgebra::DMatrix::from_fn(12, 3, |r, c| p.dataset().row(r)[c]);
        let b = nalgebra::DVector::from_column_slice(p.dataset().targets());
        let x = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * b));
        let g = p.full_grad(x.as_slice()).unwrap();
        assert!(linalg::norm(&g) < 1e-12, "{g:?}");
    }

    #[test]
    fn f32_instance_agrees_with_f64() {
        let d64 = synth_dataset::<f64>(4, 6, SynthKind::separable_logistic(), 2).unwrap();
        let d32 = synth_dataset::<f32>(4, 6, SynthKind::separable_logistic(), 2).unwrap();
        let p64 = LocalProblem::new(d64, LossKind::Logistic, Regularizer::Zero).unwrap();
        let p32 = LocalProblem::new(d32, LossKind::Logistic, Regularizer::Zero).unwrap();
        let g64 = p64.full_grad(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        let g32 = p32.full_grad(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        for (a, b) in g64.iter().zip(&g32) {
            assert!((a - *b as f64).abs() < 1e-5);
        }
    }

    /// Spectral norm of the 2×2 Hessian of component `k`, from the explicit
    /// second derivative of each loss.
    fn hessian_norm(p: &LocalProblem<f64>, x: &[f64], k: usize) -> f64 {
        let d = p.dataset().row(k);
        let c = p.dataset().target(k);
        let (curv, tau) = match p.loss() {
            LossKind::LeastSquares => (1.0, 0.0),
            LossKind::Logistic => {
                let s = (c * (d[0] * x[0] + d[1] * x[1])).sigmoid();
                (s * (1.0 - s), 0.0)
            }
            LossKind::LogisticL2 { tau } => {
                let s = (c * (d[0] * x[0] + d[1] * x[1])).sigmoid();
                (s * (1.0 - s), *tau)
            }
        };
        let (a, b, e) = (curv * d[0] * d[0] + tau, curv * d[0] * d[1], curv * d[1] * d[1] + tau);
        let mid = (a + e) / 2.0;
        let rad = (((a - e) / 2.0).powi(2) + b * b).sqrt();
        (mid + rad).abs().max((mid - rad).abs())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn gradient_matches_central_differences(seed in 0u64..1000, li in 0usize..3, xs in proptest::collection::vec(-2.0f64..2.0, 3)) {
            let p = random_problem(seed, losses()[li], 4, 3);
            let k = (seed % 4) as usize;
            let g = p.component_grad(&xs, k).unwrap();
            let h = 1e-6 * (1.0 + linalg::norm(&xs));
            for j in 0..3 {
                let mut up = xs.clone();
                let mut dn = xs.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (p.component_value(&up, k).unwrap() - p.component_value(&dn, k).unwrap()) / (2.0 * h);
                prop_assert!((fd - g[j]).abs() <= 1e-5 * (1.0 + g[j].abs()), "j={j} fd={fd} g={}", g[j]);
                prop_assert_eq!(p.component_grad_coordinate(&xs, k, j).unwrap(), g[j]);
            }
        }

        #[test]
        fn convexity_and_cocoercivity(seed in 0u64..1000, li in 0usize..3,
            x in proptest::collection::vec(-3.0f64..3.0, 3), y in proptest::collection::vec(-3.0f64..3.0, 3)) {
            let p = random_problem(seed, losses()[li], 3, 3);
            for k in 0..3 {
                let fx = p.component_value(&x, k).unwrap();
                let fy = p.component_value(&y, k).unwrap();
                let gx = p.component_grad(&x, k).unwrap();
                let gy = p.component_grad(&y, k).unwrap();
                let breg = fy - fx - linalg::dot(&gx, &linalg::sub(&y, &x));
                prop_assert!(breg >= -1e-12 * (1.0 + fx.abs() + fy.abs()));
                let lhs = linalg::dist_sq(&gx, &gy);
                let lk = p.component_smoothness()[k];
                prop_assert!(lhs <= 2.0 * lk * breg.max(0.0) + 1e-10 * (1.0 + lhs), "{lhs} vs {}", 2.0 * lk * breg);
            }
        }

        #[test]
        fn hessian_bounded_by_component_smoothness(seed in 0u64..1000, li in 0usize..3, x in proptest::collection::vec(-3.0f64..3.0, 2)) {
            let p = random_problem(seed, losses()[li], 5, 2);
            for k in 0..5 {
                prop_assert!(hessian_norm(&p, &x, k) <= p.component_smoothness()[k] * (1.0 + 1e-12));
            }
        }

        #[test]
        fn value_matches_extended_precision(seed in 0u64..1000, li in 0usize..3, x in proptest::collection::vec(-30.0f64..30.0, 3)) {
            let mut hp = crate::hp::Hp::new();
            let p = random_problem(seed, losses()[li], 2, 3);
            for k in 0..2 {
                let c = hp.of(p.dataset().target(k));
                let score = hp.dot(p.dataset().row(k), &x);
                let expect = match p.loss() {
                    LossKind::LeastSquares => {
                        let r = hp.sub(&score, &c);
                        hp.div(&hp.mul(&r, &r), &hp.of(2.0))
                    }
                    other => {
                        let tau = match other { LossKind::LogisticL2 { tau } => *tau, _ => 0.0 };
                        let m = hp.mul(&c, &score).neg();
                        let sp = hp.softplus(&m);
                        let reg = hp.mul(&hp.of(tau / 2.0), &hp.dot(&x, &x));
                        hp.add(&sp, &reg)
                    }
                };
                let expect = hp.to_f64(&expect);
                let got = p.component_value(&x, k).unwrap();
                prop_assert!((got - expect).abs() <= 1e-13 * (1.0 + expect.abs()), "{got} vs {expect}");
            }
        }
    }
}
