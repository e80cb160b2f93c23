//! Dense vector kernels on slices and a small symmetric solver.

use crate::scalar::Scalar;

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm_sq<T: Scalar>(a: &[T]) -> T {
    dot(a, a)
}

pub fn norm<T: Scalar>(a: &[T]) -> T {
    norm_sq(a).sqrt()
}

/// `‖a - b‖²`
pub fn dist_sq<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

pub fn dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    dist_sq(a, b).sqrt()
}

/// `y += alpha * x`
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale<T: Scalar>(alpha: T, x: &mut [T]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub fn sub<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub fn add<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

pub fn zeros<T: Scalar>(n: usize) -> Vec<T> {
    vec![T::zero(); n]
}

/// Arithmetic mean of equally sized vectors, summed in iteration order.
pub fn mean<'a, T: Scalar, I>(rows: I, dim: usize) -> Vec<T>
where
    I: IntoIterator<Item = &'a [T]>,
{
    let mut acc = zeros(dim);
    let mut count = 0usize;
    for row in rows {
        axpy(T::one(), row, &mut acc);
        count += 1;
    }
    if count > 0 {
        scale(T::one() / T::of_usize(count), &mut acc);
    }
    acc
}

pub fn max_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc.max((x - y).abs()))
}

/// Solves `A x = b` for a symmetric positive definite `A` (row-major, `n × n`)
/// by Cholesky factorization. Returns `None` when `A` is not numerically SPD.
pub fn solve_spd<T: Scalar>(a: &[T], b: &[T]) -> Option<Vec<T>> {
    let n = b.len();
    if a.len() != n * n {
        return None;
    }
    let mut l = zeros::<T>(n * n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= T::zero() || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = zeros::<T>(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = zeros::<T>(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_small_system() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let b = [1.0, 2.0, 3.0];
        let x = solve_spd(&a, &b).unwrap();
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum::<f64>() - b[i];
            assert!(r.abs() < 1e-14);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(solve_spd(&[1.0, 2.0, 2.0, 1.0], &[0.0, 0.0]).is_none());
    }

    #[test]
    fn mean_of_rows() {
        let rows = [vec![1.0f32, 2.0], vec![3.0, 6.0]];
        assert_eq!(mean(rows.iter().map(|r| r.as_slice()), 2), vec![2.0, 4.0]);
    }
}
