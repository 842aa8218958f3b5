//! Temporal Plackett-Luce likelihood over simplex-valued ratings.
//!
//! Ratings live on the probability simplex per timepoint; identifiable
//! log-space utilities use the Helmert contrast matrix to map n-1
//! unconstrained latent functions to n zero-sum utilities. The likelihood
//! of a ranking is the sequential choice product, evaluated in log space
//! with max-shifted log-sum-exp so large utility spreads cannot underflow.

use crate::error::{Error, Result};
use crate::float::Float;
use crate::ranking::RankingObservation;
use crate::stats::softmax_inplace;
use ndarray::{Array2, ArrayView2};

/// Orthogonal contrast matrix mapping n-1 unconstrained latents to n
/// zero-sum utilities.
#[derive(Debug, Clone)]
pub struct HelmertMatrix<F> {
    n: usize,
    q: Array2<F>,
}

/// Build the n x (n-1) Helmert contrast matrix from its closed form:
/// entry (i, k) is sqrt(1/(k(k+1))) for i <= k, -sqrt(k/(k+1)) for
/// i = k+1, and zero below (1-based i, k).
pub fn helmert<F: Float>(n: usize) -> Result<HelmertMatrix<F>> {
    if n < 2 {
        return Err(Error::invalid("helmert requires n >= 2"));
    }
    let mut q = Array2::<F>::zeros((n, n - 1));
    for k in 1..n {
        let kf = F::from_usize_(k);
        let up = (F::one() / (kf * (kf + F::one()))).sqrt();
        let down = -(kf / (kf + F::one())).sqrt();
        for i in 1..=n {
            q[(i - 1, k - 1)] = if i <= k {
                up
            } else if i == k + 1 {
                down
            } else {
                F::zero()
            };
        }
    }
    Ok(HelmertMatrix { n, q })
}

impl<F: Float> HelmertMatrix<F> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &Array2<F> {
        &self.q
    }

    /// mu = Q eta for one timepoint (eta has length n-1, mu length n).
    pub fn expand_row(&self, eta: &[F], mu: &mut [F]) {
        for i in 0..self.n {
            let mut s = F::zero();
            for k in 0..self.n - 1 {
                s += self.q[(i, k)] * eta[k];
            }
            mu[i] = s;
        }
    }

    /// eta-space pullback of a mu-space gradient: g_eta = Q^T g_mu.
    pub fn contract_row(&self, g_mu: &[F], g_eta: &mut [F]) {
        for k in 0..self.n - 1 {
            let mut s = F::zero();
            for i in 0..self.n {
                s += self.q[(i, k)] * g_mu[i];
            }
            g_eta[k] = s;
        }
    }
}

/// Unconstrained latents eta (T x n-1) together with the derived zero-sum
/// utilities mu (T x n) and simplex ratings theta (T x n).
#[derive(Debug, Clone)]
pub struct LatentUtilities<F> {
    pub eta: Array2<F>,
    pub mu: Array2<F>,
    pub theta: Array2<F>,
}

impl<F: Float> LatentUtilities<F> {
    pub fn from_eta(eta: Array2<F>, h: &HelmertMatrix<F>) -> Result<Self> {
        let t = eta.nrows();
        if eta.ncols() != h.n() - 1 {
            return Err(Error::DimensionMismatch {
                expected: h.n() - 1,
                got: eta.ncols(),
            });
        }
        let n = h.n();
        let mut mu = Array2::<F>::zeros((t, n));
        let mut theta = Array2::<F>::zeros((t, n));
        let mut row = vec![F::zero(); n];
        for ti in 0..t {
            let eta_row: Vec<F> = (0..n - 1).map(|k| eta[(ti, k)]).collect();
            h.expand_row(&eta_row, &mut row);
            for i in 0..n {
                mu[(ti, i)] = row[i];
            }
            softmax_inplace(&mut row);
            for i in 0..n {
                theta[(ti, i)] = row[i];
            }
            row.iter_mut().for_each(|v| *v = F::zero());
        }
        Ok(Self { eta, mu, theta })
    }

    pub fn timepoints(&self) -> usize {
        self.eta.nrows()
    }

    pub fn n(&self) -> usize {
        self.mu.ncols()
    }
}

fn check_columns<F: Float>(obs: &[RankingObservation<F>], n: usize, t: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for o in obs {
        if o.timepoint >= t {
            return Err(Error::DimensionMismatch {
                expected: t,
                got: o.timepoint + 1,
            });
        }
        seen.iter_mut().for_each(|s| *s = false);
        for col in o.present() {
            if col >= n {
                return Err(Error::UnknownAlgorithm(col));
            }
            if seen[col] {
                return Err(Error::invalid(format!(
                    "column {col} appears twice in one ranking"
                )));
            }
            seen[col] = true;
        }
        if o.ordering.is_empty() {
            return Err(Error::invalid("empty ranking"));
        }
        if !(o.weight > F::zero()) {
            return Err(Error::invalid("observation weight must be positive"));
        }
    }
    Ok(())
}

fn validate_simplex<F: Float>(theta: &ArrayView2<F>) -> Result<()> {
    let tol = F::cast(1e-8);
    for row in theta.rows() {
        let mut sum = F::zero();
        for &v in row {
            if !(v > F::zero()) {
                return Err(Error::NotSimplex(v.to64()));
            }
            sum += v;
        }
        if (sum - F::one()).abs() > tol {
            return Err(Error::NotSimplex((sum - F::one()).to64()));
        }
    }
    Ok(())
}

/// Log-likelihood of weighted rankings under unnormalized per-timepoint
/// logits (rows of `logits`). Invariant to adding a constant to any row.
pub fn pl_log_likelihood_logits<F: Float>(
    obs: &[RankingObservation<F>],
    logits: &ArrayView2<F>,
) -> Result<F> {
    check_columns(obs, logits.ncols(), logits.nrows())?;
    let workspace = LogitWorkspace::new(logits);
    let mut total = F::zero();
    let mut scratch = Vec::new();
    for o in obs {
        total += o.weight * ranking_loglik(o, &workspace, None, &mut scratch);
    }
    Ok(total)
}

/// Log-likelihood of weighted rankings at simplex ratings `theta` (T x n).
pub fn pl_log_likelihood<F: Float>(
    obs: &[RankingObservation<F>],
    theta: &ArrayView2<F>,
) -> Result<F> {
    validate_simplex(theta)?;
    let logits = theta.mapv(|v| v.ln());
    pl_log_likelihood_logits(obs, &logits.view())
}

/// Log-likelihood and its gradient with respect to the logits (T x n).
/// Gradient rows sum to zero, matching the shift invariance of the model.
pub fn pl_loglik_grad_logits<F: Float>(
    obs: &[RankingObservation<F>],
    logits: &ArrayView2<F>,
) -> Result<(F, Array2<F>)> {
    check_columns(obs, logits.ncols(), logits.nrows())?;
    let workspace = LogitWorkspace::new(logits);
    let mut grad = Array2::<F>::zeros(logits.dim());
    let mut total = F::zero();
    let mut scratch = Vec::new();
    for o in obs {
        total += o.weight * ranking_loglik(o, &workspace, Some(&mut grad), &mut scratch);
    }
    Ok((total, grad))
}

/// Log-likelihood and gradient with respect to the Helmert latents eta
/// (T x n-1). Matches central finite differences of the likelihood composed
/// with mu = Q eta and theta = softmax(mu).
pub fn pl_log_likelihood_grad<F: Float>(
    obs: &[RankingObservation<F>],
    latents: &LatentUtilities<F>,
    h: &HelmertMatrix<F>,
) -> Result<(F, Array2<F>)> {
    let (ll, g_mu) = pl_loglik_grad_logits(obs, &latents.mu.view())?;
    let t = latents.timepoints();
    let n = latents.n();
    let mut g_eta = Array2::<F>::zeros((t, n - 1));
    let mut mu_row = vec![F::zero(); n];
    let mut eta_row = vec![F::zero(); n - 1];
    for ti in 0..t {
        for i in 0..n {
            mu_row[i] = g_mu[(ti, i)];
        }
        h.contract_row(&mu_row, &mut eta_row);
        for k in 0..n - 1 {
            g_eta[(ti, k)] = eta_row[k];
        }
    }
    Ok((ll, g_eta))
}

/// Log-likelihood and gradient with respect to theta entries (T x n),
/// treating each entry as free (the simplex constraint is the caller's
/// transform to handle).
pub fn pl_loglik_grad_theta<F: Float>(
    obs: &[RankingObservation<F>],
    theta: &ArrayView2<F>,
) -> Result<(F, Array2<F>)> {
    validate_simplex(theta)?;
    let logits = theta.mapv(|v| v.ln());
    let (ll, g_logits) = pl_loglik_grad_logits(obs, &logits.view())?;
    let mut g_theta = g_logits;
    for ((ti, i), g) in g_theta.indexed_iter_mut() {
        *g /= theta[(ti, i)];
    }
    Ok((ll, g_theta))
}

/// Per-call cache: row-max-shifted exponentials of the logits, computed
/// once so each ranking evaluation is plain arithmetic plus one log per
/// position.
struct LogitWorkspace<F> {
    shifted: Array2<F>,
    exps: Array2<F>,
}

impl<F: Float> LogitWorkspace<F> {
    fn new(logits: &ArrayView2<F>) -> Self {
        let (t, n) = logits.dim();
        let mut row_max = vec![F::neg_infinity(); t];
        for ti in 0..t {
            for i in 0..n {
                row_max[ti] = row_max[ti].max(logits[(ti, i)]);
            }
        }
        let mut shifted = Array2::<F>::zeros((t, n));
        let mut exps = Array2::<F>::zeros((t, n));
        for ti in 0..t {
            for i in 0..n {
                let v = logits[(ti, i)] - row_max[ti];
                shifted[(ti, i)] = v;
                exps[(ti, i)] = v.exp();
            }
        }
        Self { shifted, exps }
    }
}

/// Sequential-choice log probability of one ranking, optionally accumulating
/// the weighted logit gradient. Works on row-max-shifted exponentials; a
/// denominator that underflows entirely yields -inf, which samplers and
/// line searches treat as a rejected point.
fn ranking_loglik<F: Float>(
    o: &RankingObservation<F>,
    ws: &LogitWorkspace<F>,
    grad: Option<&mut Array2<F>>,
    scratch: &mut Vec<F>,
) -> F {
    let t = o.timepoint;
    let m = o.ordering.len();
    // Backward pass: each position's choice denominator in the shifted
    // linear domain. The pool (unranked remainder of a top-m partial
    // ranking) sits in every denominator.
    scratch.clear();
    scratch.resize(m, F::zero());
    let denom = scratch;
    let mut tail = F::zero();
    for &col in &o.pool {
        tail += ws.exps[(t, col)];
    }
    for k in (0..m).rev() {
        tail += ws.exps[(t, o.ordering[k])];
        denom[k] = tail;
    }
    let mut ll = F::zero();
    for k in 0..m {
        ll += ws.shifted[(t, o.ordering[k])] - denom[k].ln();
    }
    if let Some(grad) = grad {
        let w = o.weight;
        for k in 0..m {
            grad[(t, o.ordering[k])] += w;
            let inv = w / denom[k];
            // Every member of the k-th denominator picks up its softmax share.
            for &col in &o.ordering[k..] {
                grad[(t, col)] -= inv * ws.exps[(t, col)];
            }
            for &col in &o.pool {
                grad[(t, col)] -= inv * ws.exps[(t, col)];
            }
        }
    }
    ll
}

/// Pairwise win probability theta_i / (theta_i + theta_j); independent of
/// every other rating by the choice axiom.
pub fn pairwise_win_probability<F: Float>(theta_t: &[F], i: usize, j: usize) -> Result<F> {
    if i == j {
        return Err(Error::invalid("pairwise win probability needs i != j"));
    }
    let n = theta_t.len();
    if i >= n || j >= n {
        return Err(Error::UnknownAlgorithm(i.max(j)));
    }
    Ok(theta_t[i] / (theta_t[i] + theta_t[j]))
}

/// Portfolio rating: sum of member ratings with multiplicity. Under
/// max-aggregation this is the probability that the portfolio contains the
/// winner.
pub fn portfolio_rating<F: Float>(theta_t: &[F], members: &[usize]) -> Result<F> {
    if members.is_empty() {
        return Err(Error::invalid("portfolio must not be empty"));
    }
    let mut s = F::zero();
    for &i in members {
        if i >= theta_t.len() {
            return Err(Error::UnknownAlgorithm(i));
        }
        s += theta_t[i];
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn obs(t: usize, ordering: Vec<usize>, weight: f64) -> RankingObservation<f64> {
        RankingObservation::full(t, ordering, weight)
    }

    #[test]
    fn helmert_small_cases() {
        let h: HelmertMatrix<f64> = helmert(2).unwrap();
        let c = 1.0 / 2.0f64.sqrt();
        assert!((h.matrix()[(0, 0)] - c).abs() < 1e-15);
        assert!((h.matrix()[(1, 0)] + c).abs() < 1e-15);

        let h: HelmertMatrix<f64> = helmert(3).unwrap();
        let a = (1.0 / 6.0f64).sqrt();
        let b = -(2.0 / 3.0f64).sqrt();
        assert!((h.matrix()[(0, 1)] - a).abs() < 1e-15);
        assert!((h.matrix()[(1, 1)] - a).abs() < 1e-15);
        assert!((h.matrix()[(2, 1)] - b).abs() < 1e-15);

        assert!(helmert::<f64>(1).is_err());
    }

    #[test]
    fn helmert_orthonormal_and_zero_sum() {
        for n in 2..=64usize {
            let h: HelmertMatrix<f64> = helmert(n).unwrap();
            let q = h.matrix();
            let qtq = q.t().dot(q);
            for i in 0..n - 1 {
                for j in 0..n - 1 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((qtq[(i, j)] - want).abs() < 1e-12, "n={n}");
                }
                let col_sum: f64 = (0..n).map(|r| q[(r, i)]).sum();
                assert!(col_sum.abs() < 1e-12, "n={n}");
            }
        }
    }

    #[test]
    fn likelihood_hand_cases() {
        let theta = array![[0.5f64, 0.5]];
        let ll = pl_log_likelihood(&[obs(0, vec![0, 1], 1.0)], &theta.view()).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-12);

        let theta = array![[0.5f64, 0.3, 0.2]];
        let ll = pl_log_likelihood(&[obs(0, vec![0, 1, 2], 1.0)], &theta.view()).unwrap();
        assert!((ll - 0.3f64.ln()).abs() < 1e-12);

        let double = pl_log_likelihood(&[obs(0, vec![0, 1, 2], 2.0)], &theta.view()).unwrap();
        assert!((double - 2.0 * ll).abs() < 1e-12);
    }

    #[test]
    fn partial_ranking_truncates_product() {
        let theta = array![[0.5f64, 0.3, 0.2]];
        let top1 = RankingObservation {
            timepoint: 0,
            ordering: vec![0],
            pool: vec![1, 2],
            weight: 1.0,
        };
        let ll = pl_log_likelihood(&[top1], &theta.view()).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-12);

        // Dropping the bottom of a full ranking equals the top-(n-1) ranking.
        let full = obs(0, vec![0, 1, 2], 1.0);
        let top2 = RankingObservation {
            timepoint: 0,
            ordering: vec![0, 1],
            pool: vec![2],
            weight: 1.0,
        };
        let a = pl_log_likelihood(&[full], &theta.view()).unwrap();
        let b = pl_log_likelihood(&[top2], &theta.view()).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn normalization_over_all_rankings() {
        let theta = array![[0.55f64, 0.25, 0.2]];
        let perms: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let total: f64 = perms
            .iter()
            .map(|p| {
                pl_log_likelihood(&[obs(0, p.to_vec(), 1.0)], &theta.view())
                    .unwrap()
                    .exp()
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shift_invariance_is_exact() {
        let logits = array![[0.3f64, -1.2, 2.0], [0.0, 0.5, -0.5]];
        let shifted = logits.mapv(|v| v + 123.456);
        let o = vec![obs(0, vec![2, 0, 1], 1.0), obs(1, vec![1, 0, 2], 0.5)];
        let a = pl_log_likelihood_logits(&o, &logits.view()).unwrap();
        let b = pl_log_likelihood_logits(&o, &shifted.view()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (t, n) = (3usize, 4usize);
        let h: HelmertMatrix<f64> = helmert(n).unwrap();
        let mut eta = Array2::<f64>::zeros((t, n - 1));
        eta.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let mut observations = Vec::new();
        for ti in 0..t {
            for _ in 0..5 {
                let mut perm: Vec<usize> = (0..n).collect();
                use rand::seq::SliceRandom;
                perm.shuffle(&mut rng);
                observations.push(obs(ti, perm, rng.random_range(0.5..2.0)));
            }
        }
        let latents = LatentUtilities::from_eta(eta.clone(), &h).unwrap();
        let (_, g) = pl_log_likelihood_grad(&observations, &latents, &h).unwrap();

        let f = |eta: &Array2<f64>| -> f64 {
            let l = LatentUtilities::from_eta(eta.clone(), &h).unwrap();
            pl_log_likelihood(&observations, &l.theta.view()).unwrap()
        };
        let step = 1e-6;
        for ti in 0..t {
            for k in 0..n - 1 {
                let mut ep = eta.clone();
                ep[(ti, k)] += step;
                let mut em = eta.clone();
                em[(ti, k)] -= step;
                let fd = (f(&ep) - f(&em)) / (2.0 * step);
                let rel = (g[(ti, k)] - fd).abs() / fd.abs().max(1e-8);
                assert!(rel < 1e-5, "({ti},{k}): {} vs {}", g[(ti, k)], fd);
            }
        }
    }

    #[test]
    fn gradient_zero_at_symmetric_data() {
        let n = 3;
        let h: HelmertMatrix<f64> = helmert(n).unwrap();
        let latents = LatentUtilities::from_eta(Array2::zeros((1, n - 1)), &h).unwrap();
        let perms: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let observations: Vec<_> = perms.iter().map(|p| obs(0, p.to_vec(), 1.0)).collect();
        let (_, g) = pl_log_likelihood_grad(&observations, &latents, &h).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gradient_is_local_in_time() {
        let n = 3;
        let h: HelmertMatrix<f64> = helmert(n).unwrap();
        let latents = LatentUtilities::from_eta(Array2::from_elem((4, n - 1), 0.3), &h).unwrap();
        let observations = vec![obs(2, vec![1, 0, 2], 1.0)];
        let (_, g) = pl_log_likelihood_grad(&observations, &latents, &h).unwrap();
        for ti in [0usize, 1, 3] {
            for k in 0..n - 1 {
                assert_eq!(g[(ti, k)], 0.0);
            }
        }
    }

    #[test]
    fn win_probability_and_portfolio() {
        let theta = [0.6f64, 0.3, 0.1];
        assert!((pairwise_win_probability(&theta, 0, 1).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(pairwise_win_probability(&theta, 1, 1).is_err());
        // IIA: same answer regardless of the remaining entries.
        let theta2 = [0.6f64, 0.3, 0.05, 0.05];
        let a = pairwise_win_probability(&theta, 0, 1).unwrap();
        let b = pairwise_win_probability(&theta2, 0, 1).unwrap();
        assert!((a - b).abs() < 1e-12);

        assert!((portfolio_rating(&theta, &[0, 1, 2]).unwrap() - 1.0).abs() < 1e-12);
        assert!((portfolio_rating(&theta, &[1, 1]).unwrap() - 0.6).abs() < 1e-12);
        assert!(portfolio_rating(&theta, &[]).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let theta = array![[0.5f64, 0.5]];
        assert!(pl_log_likelihood(&[obs(0, vec![0, 5], 1.0)], &theta.view()).is_err());
        assert!(pl_log_likelihood(&[obs(3, vec![0, 1], 1.0)], &theta.view()).is_err());
        let bad = array![[0.7f64, 0.7]];
        assert!(pl_log_likelihood(&[obs(0, vec![0, 1], 1.0)], &bad.view()).is_err());
        assert!(pl_log_likelihood(&[obs(0, vec![0, 0], 1.0)], &theta.view()).is_err());
    }
}
