//! Matérn covariance kernels over the time axis.

use crate::error::{Error, Result};
use crate::float::Float;
use crate::linalg::cholesky;
use ndarray::Array2;

/// Smoothness order of the Matérn family. `Infinity` is the squared
/// exponential limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaternNu {
    ThreeHalves,
    FiveHalves,
    Infinity,
}

/// Stationary Matérn kernel sigma^2 * C_nu(|t - t'| / ell).
#[derive(Debug, Clone, Copy)]
pub struct MaternKernel<F> {
    pub nu: MaternNu,
    pub amplitude: F,
    pub lengthscale: F,
}

impl<F: Float> MaternKernel<F> {
    pub fn new(nu: MaternNu, amplitude: F, lengthscale: F) -> Result<Self> {
        if !(amplitude > F::zero()) || !(lengthscale > F::zero()) {
            return Err(Error::invalid("kernel amplitude and lengthscale must be > 0"));
        }
        Ok(Self {
            nu,
            amplitude,
            lengthscale,
        })
    }
}

/// Kernel value at distance |t - t'| via the half-integer closed forms.
pub fn matern_cov<F: Float>(kernel: &MaternKernel<F>, t: F, t_prime: F) -> F {
    let d = (t - t_prime).abs();
    let s2 = kernel.amplitude * kernel.amplitude;
    let ell = kernel.lengthscale;
    match kernel.nu {
        MaternNu::ThreeHalves => {
            let u = F::cast(3.0).sqrt() * d / ell;
            s2 * (F::one() + u) * (-u).exp()
        }
        MaternNu::FiveHalves => {
            let u = F::cast(5.0).sqrt() * d / ell;
            s2 * (F::one() + u + u * u / F::cast(3.0)) * (-u).exp()
        }
        MaternNu::Infinity => {
            let z = d / ell;
            s2 * (-z * z / F::cast(2.0)).exp()
        }
    }
}

/// d k(t, t') / d ln(ell), used by kernel hyperparameter gradients.
pub fn matern_cov_dlog_ell<F: Float>(kernel: &MaternKernel<F>, t: F, t_prime: F) -> F {
    let d = (t - t_prime).abs();
    let s2 = kernel.amplitude * kernel.amplitude;
    let ell = kernel.lengthscale;
    match kernel.nu {
        MaternNu::ThreeHalves => {
            let u = F::cast(3.0).sqrt() * d / ell;
            s2 * u * u * (-u).exp()
        }
        MaternNu::FiveHalves => {
            let u = F::cast(5.0).sqrt() * d / ell;
            s2 * u * u * (F::one() + u) / F::cast(3.0) * (-u).exp()
        }
        MaternNu::Infinity => {
            let z = d / ell;
            let z2 = z * z;
            s2 * z2 * (-z2 / F::cast(2.0)).exp()
        }
    }
}

/// Gram matrix over timepoints with relative jitter 1e-9 * sigma^2 on the
/// diagonal.
pub fn gram<F: Float>(kernel: &MaternKernel<F>, times: &[F]) -> Array2<F> {
    let t = times.len();
    let jitter = F::cast(1e-9) * kernel.amplitude * kernel.amplitude;
    let mut k = Array2::<F>::zeros((t, t));
    for i in 0..t {
        for j in 0..=i {
            let v = matern_cov(kernel, times[i], times[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += jitter;
    }
    k
}

/// d Gram / d ln(ell) (the jitter does not depend on the lengthscale).
pub fn gram_dlog_ell<F: Float>(kernel: &MaternKernel<F>, times: &[F]) -> Array2<F> {
    let t = times.len();
    let mut k = Array2::<F>::zeros((t, t));
    for i in 0..t {
        for j in 0..=i {
            let v = matern_cov_dlog_ell(kernel, times[i], times[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky factor of the jittered Gram matrix; failure is reported as a
/// diagnosable error rather than silent NaN.
pub fn gram_cholesky<F: Float>(kernel: &MaternKernel<F>, times: &[F]) -> Result<Array2<F>> {
    cholesky(&gram(kernel, times))
}

/// 1-D spectral density of the kernel at angular frequency omega.
pub fn spectral_density<F: Float>(kernel: &MaternKernel<F>, omega: F) -> F {
    let s2 = kernel.amplitude * kernel.amplitude;
    let ell = kernel.lengthscale;
    match kernel.nu {
        MaternNu::ThreeHalves => {
            // 4 * 3^(3/2) / ell^3 * (3/ell^2 + w^2)^-2
            let c = F::cast(4.0 * 3.0f64.powf(1.5));
            let base = F::cast(3.0) / (ell * ell) + omega * omega;
            s2 * c / (ell * ell * ell) / (base * base)
        }
        MaternNu::FiveHalves => {
            // (16/3) * 5^(5/2) / ell^5 * (5/ell^2 + w^2)^-3
            let c = F::cast(16.0 / 3.0 * 5.0f64.powf(2.5));
            let base = F::cast(5.0) / (ell * ell) + omega * omega;
            let ell5 = ell * ell * ell * ell * ell;
            s2 * c / ell5 / (base * base * base)
        }
        MaternNu::Infinity => {
            let two_pi = F::cast(2.0 * std::f64::consts::PI);
            s2 * ell * two_pi.sqrt() * (-(ell * ell * omega * omega) / F::cast(2.0)).exp()
        }
    }
}

/// d ln S(omega) / d ln(ell).
pub fn spectral_density_dlog_ell<F: Float>(kernel: &MaternKernel<F>, omega: F) -> F {
    let ell = kernel.lengthscale;
    let inv2 = F::one() / (ell * ell);
    match kernel.nu {
        MaternNu::ThreeHalves => {
            let base = F::cast(3.0) * inv2 + omega * omega;
            -F::cast(3.0) + F::cast(12.0) * inv2 / base
        }
        MaternNu::FiveHalves => {
            let base = F::cast(5.0) * inv2 + omega * omega;
            -F::cast(5.0) + F::cast(30.0) * inv2 / base
        }
        MaternNu::Infinity => F::one() - ell * ell * omega * omega,
    }
}
