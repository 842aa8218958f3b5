//! Gaussian approximation at the posterior mode.
//!
//! The covariance is the inverse of the negative Hessian of the log
//! posterior, with the Hessian formed by central finite differences of the
//! analytic gradient. An indefinite Hessian picks up an escalating diagonal
//! ridge until the Cholesky succeeds; a large ridge is flagged so callers
//! can fall back to MCMC.

use crate::error::{Error, Result};
use crate::float::Float;
use crate::inference::Posterior;
use crate::linalg::{cholesky, solve_lower_transpose};
use crate::stats::std_normal;
use ndarray::Array2;
use rand::Rng;

pub struct LaplaceDraws<F> {
    /// Unconstrained draws, one row per sample.
    pub draws: Array2<F>,
    /// Diagonal ridge that was needed to factor the negative Hessian.
    pub ridge: f64,
}

/// Ridge above which the Gaussian approximation is considered unreliable.
pub const RIDGE_WARN_THRESHOLD: f64 = 1e-2;

pub fn laplace_sample<F: Float, R: Rng + ?Sized>(
    posterior: &Posterior<'_, F>,
    map_params: &[F],
    draws: usize,
    rng: &mut R,
) -> Result<LaplaceDraws<F>> {
    if draws == 0 {
        return Err(Error::invalid("need at least one draw"));
    }
    let dim = posterior.dim();
    if map_params.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: map_params.len(),
        });
    }

    // Central differences of the analytic gradient, symmetrized.
    let mut hessian = Array2::<F>::zeros((dim, dim));
    for j in 0..dim {
        let h = F::cast(1e-4) * map_params[j].abs().max(F::one());
        let mut plus = map_params.to_vec();
        plus[j] += h;
        let mut minus = map_params.to_vec();
        minus[j] -= h;
        let (_, gp) = posterior.logp_grad(&plus)?;
        let (_, gm) = posterior.logp_grad(&minus)?;
        for i in 0..dim {
            hessian[(i, j)] = (gp[i] - gm[i]) / (F::cast(2.0) * h);
        }
    }
    let mut neg_h = Array2::<F>::zeros((dim, dim));
    for i in 0..dim {
        for j in 0..dim {
            neg_h[(i, j)] = -(hessian[(i, j)] + hessian[(j, i)]) / F::cast(2.0);
        }
    }

    let mut ridge = 0.0f64;
    let factor = loop {
        let mut a = neg_h.clone();
        if ridge > 0.0 {
            for i in 0..dim {
                a[(i, i)] += F::cast(ridge);
            }
        }
        match cholesky(&a) {
            Ok(l) => break l,
            Err(_) => {
                ridge = if ridge == 0.0 { 1e-12 } else { ridge * 10.0 };
                if ridge > 1e6 {
                    return Err(Error::Sampler(
                        "negative Hessian cannot be made positive definite".into(),
                    ));
                }
            }
        }
    };

    // Samples are map + L^-T z with -H = L L^T.
    let mut out = Array2::<F>::zeros((draws, dim));
    let mut z = vec![F::zero(); dim];
    for s in 0..draws {
        for v in z.iter_mut() {
            *v = std_normal(rng);
        }
        let delta = solve_lower_transpose(&factor, &z);
        for j in 0..dim {
            out[(s, j)] = map_params[j] + delta[j];
        }
    }
    Ok(LaplaceDraws { draws: out, ridge })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::map::{map_estimate, MapConfig};
    use crate::priors::PriorModel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_target_recovers_moments() {
        // Dirichlet stick prior on n=2 is a smooth 1-D density; compare
        // Laplace moments to dense quadrature.
        let model = PriorModel::independent_dirichlet(2, vec![1.0f64], 4.0).unwrap();
        let posterior = Posterior::new(&model, &[]);
        let res = map_estimate(&posterior, &[0.1], &MapConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ld = laplace_sample(&posterior, &res.params, 20000, &mut rng).unwrap();
        assert!(ld.ridge < 1e-9);
        let mean: f64 = ld.draws.column(0).iter().sum::<f64>() / 20000.0;

        // Quadrature oracle over y.
        let (mut num, mut den) = (0.0, 0.0);
        let mut y = -8.0;
        while y < 8.0 {
            let (lp, _) = posterior.logp_grad(&[y]).unwrap();
            let w = lp.exp();
            num += y * w;
            den += w;
            y += 1e-3;
        }
        let oracle = num / den;
        assert!((mean - oracle).abs() < 0.05, "{mean} vs {oracle}");
    }

    #[test]
    fn zero_draws_rejected() {
        let model = PriorModel::independent_dirichlet(2, vec![1.0f64], 1.0).unwrap();
        let posterior = Posterior::new(&model, &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!(laplace_sample(&posterior, &[0.0], 0, &mut rng).is_err());
    }
}
