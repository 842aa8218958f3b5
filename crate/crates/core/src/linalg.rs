//! Dense symmetric linear algebra on `ndarray` matrices: Cholesky with
//! jitter escalation, triangular solves, and log-determinants. Problem
//! sizes here are small (grid length or parameter count), so a
//! straightforward O(n^3) factorization is plenty.

use crate::error::{Error, Result};
use crate::float::Float;
use ndarray::Array2;

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky<F: Float>(a: &Array2<F>) -> Result<Array2<F>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    let mut l = Array2::<F>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if s <= F::zero() || !s.is_finite() {
                    return Err(Error::Cholesky { pivot: i });
                }
                l[(i, j)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Cholesky with escalating diagonal jitter. Returns the factor and the
/// jitter that was finally applied (zero when none was needed).
pub fn cholesky_jittered<F: Float>(
    a: &Array2<F>,
    initial_jitter: F,
    max_jitter: F,
) -> Result<(Array2<F>, F)> {
    if let Ok(l) = cholesky(a) {
        return Ok((l, F::zero()));
    }
    let mut jitter = initial_jitter;
    while jitter <= max_jitter {
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += jitter;
        }
        if let Ok(l) = cholesky(&b) {
            return Ok((l, jitter));
        }
        jitter *= F::cast(10.0);
    }
    Err(Error::Cholesky { pivot: 0 })
}

/// Solve L x = b for lower-triangular L.
pub fn solve_lower<F: Float>(l: &Array2<F>, b: &[F]) -> Vec<F> {
    let n = l.nrows();
    let mut x = b.to_vec();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solve L^T x = b for lower-triangular L.
pub fn solve_lower_transpose<F: Float>(l: &Array2<F>, b: &[F]) -> Vec<F> {
    let n = l.nrows();
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solve A x = b given the Cholesky factor L of A.
pub fn chol_solve<F: Float>(l: &Array2<F>, b: &[F]) -> Vec<F> {
    let y = solve_lower(l, b);
    solve_lower_transpose(l, &y)
}

/// log |A| from its Cholesky factor.
pub fn chol_log_det<F: Float>(l: &Array2<F>) -> F {
    let two = F::cast(2.0);
    (0..l.nrows()).map(|i| l[(i, i)].ln() * two).sum()
}

/// Full inverse from the Cholesky factor (used for trace terms in kernel
/// hyperparameter gradients).
pub fn chol_inverse<F: Float>(l: &Array2<F>) -> Array2<F> {
    let n = l.nrows();
    let mut inv = Array2::<F>::zeros((n, n));
    let mut e = vec![F::zero(); n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = F::zero());
        e[j] = F::one();
        let col = chol_solve(l, &e);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    inv
}

/// Symmetric matrix-vector product helper: y = A x.
pub fn mat_vec<F: Float>(a: &Array2<F>, x: &[F]) -> Vec<F> {
    let (n, m) = (a.nrows(), a.ncols());
    let mut y = vec![F::zero(); n];
    for i in 0..n {
        let mut s = F::zero();
        for j in 0..m {
            s += a[(i, j)] * x[j];
        }
        y[i] = s;
    }
    y
}

pub fn dot<F: Float>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm2<F: Float>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_recovers_spd() {
        let a = array![[4.0f64, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let l = cholesky(&a).unwrap();
        let rebuilt = l.dot(&l.t());
        for (x, y) in a.iter().zip(rebuilt.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        let x = chol_solve(&l, &[1.0, 2.0, 3.0]);
        let ax = mat_vec(&a, &x);
        for (v, want) in ax.iter().zip([1.0, 2.0, 3.0]) {
            assert!((v - want).abs() < 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0f64, 4.0], [4.0, 1.0]];
        assert!(cholesky(&a).is_err());
        let (_, jitter) = cholesky_jittered(&a, 1e-9, 100.0).unwrap();
        assert!(jitter > 2.0);
    }

    #[test]
    fn log_det_matches_direct() {
        let a = array![[2.0f64, 0.3], [0.3, 1.5]];
        let l = cholesky(&a).unwrap();
        let det: f64 = 2.0 * 1.5 - 0.3 * 0.3;
        assert!((chol_log_det(&l) - det.ln()).abs() < 1e-12);
    }

    #[test]
    fn inverse_matches_solve() {
        let a = array![[3.0f64, 1.0], [1.0, 2.0]];
        let l = cholesky(&a).unwrap();
        let inv = chol_inverse(&l);
        let prod = a.dot(&inv);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - want).abs() < 1e-12);
            }
        }
    }
}
