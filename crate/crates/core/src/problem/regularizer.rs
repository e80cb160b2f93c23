use crate::problem::ProblemError;
use crate::scalar::Scalar;

/// Convex, possibly non-smooth term `h_i` with a closed-form proximal map.
#[derive(Debug, Clone, PartialEq)]
pub enum Regularizer<T> {
    Zero,
    /// `(w/2)‖x‖²`
    SquaredL2 { weight: T },
    /// `w‖x‖₁`
    L1 { weight: T },
    /// Indicator of the box `lo ≤ x ≤ hi`.
    BoxIndicator { lo: Vec<T>, hi: Vec<T> },
}

impl<T: Scalar> Regularizer<T> {
    pub fn squared_l2(weight: T) -> Result<Self, ProblemError> {
        check_weight(weight)?;
        Ok(Regularizer::SquaredL2 { weight })
    }

    pub fn l1(weight: T) -> Result<Self, ProblemError> {
        check_weight(weight)?;
        Ok(Regularizer::L1 { weight })
    }

    pub fn boxed(lo: Vec<T>, hi: Vec<T>) -> Result<Self, ProblemError> {
        if lo.len() != hi.len() {
            return Err(ProblemError::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(l, h)| l > h || l.is_nan() || h.is_nan()) {
            return Err(ProblemError::InvalidParameter(
                "box bounds must satisfy lo <= hi".into(),
            ));
        }
        Ok(Regularizer::BoxIndicator { lo, hi })
    }

    /// Dimension constraint imposed by the regularizer, if any.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Regularizer::BoxIndicator { lo, .. } => Some(lo.len()),
            _ => None,
        }
    }

    /// `h(x)`; `+∞` outside the box for the indicator.
    pub fn value(&self, x: &[T]) -> T {
        match self {
            Regularizer::Zero => T::zero(),
            Regularizer::SquaredL2 { weight } => *weight * T::of(0.5) * crate::linalg::norm_sq(x),
            Regularizer::L1 { weight } => *weight * x.iter().map(|v| v.abs()).sum::<T>(),
            Regularizer::BoxIndicator { lo, hi } => {
                let inside = x
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .all(|(v, (l, h))| v >= l && v <= h);
                if inside {
                    T::zero()
                } else {
                    T::infinity()
                }
            }
        }
    }

    /// Gradient for the differentiable kinds.
    pub fn gradient(&self, x: &[T]) -> Option<Vec<T>> {
        match self {
            Regularizer::Zero => Some(vec![T::zero(); x.len()]),
            Regularizer::SquaredL2 { weight } => Some(x.iter().map(|&v| *weight * v).collect()),
            _ => None,
        }
    }

    pub fn is_smooth(&self) -> bool {
        matches!(self, Regularizer::Zero | Regularizer::SquaredL2 { .. })
    }

    /// `argmin_x h(x) + ‖y - x‖² / (2 step)`
    pub fn prox(&self, y: &[T], step: T) -> Vec<T> {
        let mut out = y.to_vec();
        self.prox_in_place(&mut out, step);
        out
    }

    pub fn prox_in_place(&self, y: &mut [T], step: T) {
        debug_assert!(step > T::zero());
        match self {
            Regularizer::Zero => {}
            Regularizer::SquaredL2 { weight } => {
                let shrink = T::one() / (T::one() + step * *weight);
                for v in y.iter_mut() {
                    *v *= shrink;
                }
            }
            Regularizer::L1 { weight } => {
                let thr = step * *weight;
                for v in y.iter_mut() {
                    let mag = (v.abs() - thr).max(T::zero());
                    *v = if mag == T::zero() { T::zero() } else { v.signum() * mag };
                }
            }
            Regularizer::BoxIndicator { lo, hi } => {
                for ((v, &l), &h) in y.iter_mut().zip(lo).zip(hi) {
                    *v = v.max(l).min(h);
                }
            }
        }
    }
}

fn check_weight<T: Scalar>(w: T) -> Result<(), ProblemError> {
    if w >= T::zero() && w.is_finite() {
        Ok(())
    } else {
        Err(ProblemError::InvalidParameter(format!(
            "regularizer weight must be finite and nonnegative, got {w}"
        )))
    }
}
