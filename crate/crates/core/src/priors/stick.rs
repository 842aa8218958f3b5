//! Stick-breaking bijection between R^(n-1) and the interior of the
//! probability simplex, with the log-Jacobian and its gradient. The
//! reference point y = 0 maps to the uniform simplex.

use crate::float::Float;
use crate::stats::logistic;

/// Forward transform: unconstrained y (length n-1) to simplex theta
/// (length n). Returns the log absolute Jacobian determinant.
pub fn stick_to_simplex<F: Float>(y: &[F], theta: &mut [F]) -> F {
    let n = theta.len();
    debug_assert_eq!(y.len(), n - 1);
    let mut rem = F::one();
    let mut log_jac = F::zero();
    for k in 0..n - 1 {
        let shift = F::from_usize_(n - 1 - k).ln();
        let z = logistic(y[k] - shift);
        theta[k] = rem * z;
        log_jac += z.ln() + (F::one() - z).ln() + rem.ln();
        rem *= F::one() - z;
    }
    theta[n - 1] = rem;
    log_jac
}

/// Inverse transform: interior simplex point to unconstrained y.
pub fn simplex_to_stick<F: Float>(theta: &[F], y: &mut [F]) {
    let n = theta.len();
    let mut rem = F::one();
    for k in 0..n - 1 {
        let z = theta[k] / rem;
        let shift = F::from_usize_(n - 1 - k).ln();
        y[k] = (z / (F::one() - z)).ln() + shift;
        rem -= theta[k];
    }
}

/// Gradient of the log-Jacobian with respect to y.
pub fn log_jacobian_grad<F: Float>(y: &[F], grad: &mut [F]) {
    let n = y.len() + 1;
    for (k, g) in grad.iter_mut().enumerate() {
        let shift = F::from_usize_(n - 1 - k).ln();
        let z = logistic(y[k] - shift);
        // d/dy_k [ln z + ln(1-z)] plus d/dy_k of the downstream remainders.
        *g = F::one() - F::cast(2.0) * z - F::from_usize_(n - 2 - k) * z;
    }
}

/// Pull a gradient with respect to theta back to y (chain rule through the
/// stick-breaking map), accumulating into `grad`.
pub fn pullback<F: Float>(y: &[F], theta: &[F], d_theta: &[F], grad: &mut [F]) {
    let n = theta.len();
    // suffix[k] = sum_{j > k} d_theta_j * theta_j
    let mut suffix = vec![F::zero(); n];
    let mut acc = F::zero();
    for j in (0..n).rev() {
        suffix[j] = acc;
        acc += d_theta[j] * theta[j];
    }
    let mut rem = F::one();
    for k in 0..n - 1 {
        let shift = F::from_usize_(n - 1 - k).ln();
        let z = logistic(y[k] - shift);
        // dtheta_k/dy_k = z(1-z)*rem; dtheta_j/dy_k = -z * theta_j for j > k.
        grad[k] += z * (F::one() - z) * rem * d_theta[k] - z * suffix[k];
        rem *= F::one() - z;
    }
}
