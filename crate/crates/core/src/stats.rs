//! Small numerical helpers shared across modules: stable reductions,
//! elementary log-densities in unconstrained space, quantiles, and seeded
//! rng derivation.

use crate::float::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// Max-shifted log-sum-exp over a slice.
pub fn log_sum_exp<F: Float>(xs: &[F]) -> F {
    let m = xs.iter().cloned().fold(F::neg_infinity(), F::max);
    if m == F::neg_infinity() {
        return m;
    }
    let s: F = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// In-place softmax of one row, max-shifted.
pub fn softmax_inplace<F: Float>(row: &mut [F]) {
    let m = row.iter().cloned().fold(F::neg_infinity(), F::max);
    let mut z = F::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

/// Numerically stable log(1 + exp(x)).
pub fn log1p_exp<F: Float>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn logistic<F: Float>(x: F) -> F {
    if x >= F::zero() {
        let e = (-x).exp();
        F::one() / (F::one() + e)
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile<F: Float>(sorted: &[F], gamma: F) -> F {
    assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = gamma * F::from_usize_(n - 1);
    let lo = pos.floor().to64() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - F::from_usize_(lo);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Trapezoidal quadrature weights over an increasing grid.
pub fn trapezoid_weights<F: Float>(points: &[F]) -> Vec<F> {
    let t = points.len();
    assert!(t >= 2);
    let half = F::cast(0.5);
    let mut w = vec![F::zero(); t];
    for i in 0..t - 1 {
        let dt = points[i + 1] - points[i];
        w[i] += half * dt;
        w[i + 1] += half * dt;
    }
    w
}

// --- log-densities used by the priors, all with hyperparameters in
// --- unconstrained (log) space and the Jacobian terms already folded in.

/// log N(x | mu, sd^2) and d/dx.
pub fn normal_logpdf_grad<F: Float>(x: F, mu: F, sd: F) -> (F, F) {
    let half = F::cast(0.5);
    let z = (x - mu) / sd;
    let lp = -half * z * z - sd.ln() - F::cast(0.5 * (2.0 * std::f64::consts::PI).ln());
    (lp, -z / sd)
}

/// LogNormal(mu, sd) prior on sigma = exp(s), as a density over s.
/// Returns (logp, dlogp/ds). The log-space Jacobian makes this a plain
/// normal density in s.
pub fn lognormal_log_space<F: Float>(s: F, mu: F, sd: F) -> (F, F) {
    normal_logpdf_grad(s, mu, sd)
}

/// InverseGamma(shape a, scale b) prior on x = exp(l), as a density over l
/// (Jacobian included). Returns (logp up to constant, dlogp/dl).
pub fn inv_gamma_log_space<F: Float>(l: F, a: F, b: F) -> (F, F) {
    // log p(x) = -(a+1) log x - b/x + const;  + log|dx/dl| = +l
    let inv = (-l).exp();
    let lp = -a * l - b * inv;
    let g = -a + b * inv;
    (lp, g)
}

/// Exponential(rate) prior on x = exp(l) as a density over l (Jacobian
/// included). Returns (logp up to constant, dlogp/dl).
pub fn exponential_log_space<F: Float>(l: F, rate: F) -> (F, F) {
    let x = l.exp();
    (l - rate * x, F::one() - rate * x)
}

/// Standard Gumbel draw.
pub fn gumbel<F: Float, R: Rng + ?Sized>(rng: &mut R) -> F {
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    F::cast(-(-u.ln()).ln())
}

/// Standard normal draw via `rand_distr`.
pub fn std_normal<F: Float, R: Rng + ?Sized>(rng: &mut R) -> F {
    let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
    F::cast(z)
}

// --- deterministic rng derivation ------------------------------------------

/// SplitMix64 step; used to combine seeds and stream tags deterministically.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Combine a master seed with stream tags into a new seed.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut s = mix64(master ^ 0x517c_c1b7_2722_0a95);
    for &t in tags {
        s = mix64(s ^ mix64(t));
    }
    s
}

/// Derive an independent, reproducible rng from a master seed and a list of
/// stream tags (round index, instance index, and so on).
pub fn derive_rng(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}
