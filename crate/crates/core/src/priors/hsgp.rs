//! Hilbert-space approximation of a stationary kernel on a bounded domain.
//!
//! Dirichlet-Laplacian eigenpairs on [-L, L] give the basis; the kernel
//! enters only through its spectral density evaluated at the square-root
//! eigenvalues. A latent function is then a linear combination of the
//! weighted eigenfunctions with standard-normal coefficients.

use crate::error::{Error, Result};
use crate::float::Float;
use crate::priors::kernels::{spectral_density, MaternKernel};
use ndarray::Array2;

#[derive(Debug, Clone)]
pub struct HsgpBasis<F> {
    /// Domain half-width L = c * t_max.
    pub boundary: F,
    /// Square-root eigenvalues omega_j = j*pi / (2L).
    pub sqrt_eigenvalues: Vec<F>,
    /// Eigenfunctions evaluated on the grid, T x m:
    /// phi_j(t) = sqrt(1/L) * sin(omega_j * (t + L)).
    pub phi: Array2<F>,
}

/// Build the truncated eigenbasis for a grid with maximum timepoint `t_max`
/// and boundary extension factor `c > 1`.
pub fn hsgp_basis<F: Float>(times: &[F], m: usize, c: F) -> Result<HsgpBasis<F>> {
    if m < 1 {
        return Err(Error::invalid("hsgp basis needs m >= 1"));
    }
    let t_max = times
        .iter()
        .cloned()
        .fold(F::neg_infinity(), F::max);
    if !(c > F::one()) {
        return Err(Error::invalid("boundary factor c must exceed 1"));
    }
    let boundary = c * t_max;
    if !(boundary > t_max) {
        return Err(Error::invalid("hsgp boundary must exceed the last timepoint"));
    }
    let half_pi_over_l = F::cast(std::f64::consts::PI) / (F::cast(2.0) * boundary);
    let norm = (F::one() / boundary).sqrt();
    let sqrt_eigenvalues: Vec<F> = (1..=m)
        .map(|j| F::from_usize_(j) * half_pi_over_l)
        .collect();
    let mut phi = Array2::<F>::zeros((times.len(), m));
    for (ti, &t) in times.iter().enumerate() {
        for (j, &w) in sqrt_eigenvalues.iter().enumerate() {
            phi[(ti, j)] = norm * (w * (t + boundary)).sin();
        }
    }
    Ok(HsgpBasis {
        boundary,
        sqrt_eigenvalues,
        phi,
    })
}

impl<F: Float> HsgpBasis<F> {
    pub fn m(&self) -> usize {
        self.sqrt_eigenvalues.len()
    }

    /// Spectral weights S(omega_j) of a kernel over this basis.
    pub fn spectral_weights(&self, kernel: &MaternKernel<F>) -> Vec<F> {
        self.sqrt_eigenvalues
            .iter()
            .map(|&w| spectral_density(kernel, w))
            .collect()
    }

    /// Covariance implied by the truncated expansion between grid rows i, j.
    pub fn implied_covariance(&self, weights: &[F], i: usize, j: usize) -> F {
        let mut s = F::zero();
        for (k, &w) in weights.iter().enumerate() {
            s += w * self.phi[(i, k)] * self.phi[(j, k)];
        }
        s
    }
}
