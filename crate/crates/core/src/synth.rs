//! Synthetic ground truth for end-to-end verification: rating trajectories
//! drawn from a Matérn process, exact Plackett-Luce ranking simulation via
//! Gumbel noise, the true Pareto set, and a small seeded optimizer testbed.

use crate::error::{Error, Result};
use crate::float::Float;
use crate::grid::TimeGrid;
use crate::linalg::cholesky;
use crate::plmodel::helmert;
use crate::priors::kernels::{gram, MaternKernel, MaternNu};
use crate::ranking::RankingObservation;
use crate::stats::{gumbel, std_normal};
use crate::trajectory::{AnytimeAlgorithm, Instance, InstanceProvider};
use ndarray::Array2;
use rand::Rng;

/// Known true ratings used to score a race after the fact.
#[derive(Debug, Clone)]
pub struct GroundTruth<F> {
    /// T x n simplex rows.
    pub theta_star: Array2<F>,
    /// log(theta_star).
    pub mu_star: Array2<F>,
    pub sigma: F,
    pub ell: F,
    pub nu: MaternNu,
    pub times: Vec<F>,
    pub seed: u64,
    /// Hyperparameter redraws forced by Cholesky failures or collisions.
    pub resamples: usize,
}

#[derive(Debug, Clone)]
pub struct GroundTruthConfig<F> {
    pub nu: MaternNu,
    pub sigma_log_mean: F,
    pub sigma_log_sd: F,
    pub ell_shape: F,
    pub ell_scale: F,
    /// Two trajectories closer than this at every grid point force a redraw.
    pub collision_tolerance: F,
}

impl<F: Float> Default for GroundTruthConfig<F> {
    fn default() -> Self {
        Self {
            nu: MaternNu::ThreeHalves,
            sigma_log_mean: F::zero(),
            sigma_log_sd: F::cast(0.5),
            ell_shape: F::cast(5.0),
            ell_scale: F::cast(3.0),
            collision_tolerance: F::cast(1e-6),
        }
    }
}

/// Draw true ratings: kernel hyperparameters from their hyperpriors, n-1
/// latent functions from the process, Helmert + softmax onto the simplex.
pub fn sample_ground_truth<F: Float>(
    n: usize,
    grid: &TimeGrid<F>,
    config: &GroundTruthConfig<F>,
    seed: u64,
) -> Result<GroundTruth<F>> {
    if n < 2 {
        return Err(Error::invalid("need at least 2 algorithms"));
    }
    let times = grid.points().to_vec();
    let t = times.len();
    let h = helmert::<F>(n)?;
    let mut rng = crate::stats::derive_rng(seed, &[0x7472_u64]);
    let mut resamples = 0usize;

    for _attempt in 0..200 {
        let sigma =
            (config.sigma_log_mean + config.sigma_log_sd * std_normal::<F, _>(&mut rng)).exp();
        let ell = {
            use rand_distr::Distribution;
            let g = rand_distr::Gamma::new(config.ell_shape.to64(), 1.0 / config.ell_scale.to64())
                .map_err(|e| Error::invalid(format!("bad hyperprior: {e}")))?;
            F::cast(1.0 / g.sample(&mut rng).max(1e-300))
        };
        let kernel = MaternKernel::new(config.nu, sigma, ell)?;
        let k = gram(&kernel, &times);
        let l = match cholesky(&k) {
            Ok(l) => l,
            Err(_) => {
                resamples += 1;
                continue;
            }
        };

        let mut eta = Array2::<F>::zeros((t, n - 1));
        for q in 0..n - 1 {
            let z: Vec<F> = (0..t).map(|_| std_normal(&mut rng)).collect();
            for i in 0..t {
                let mut s = F::zero();
                for j in 0..=i {
                    s += l[(i, j)] * z[j];
                }
                eta[(i, q)] = s;
            }
        }
        let latents = crate::plmodel::LatentUtilities::from_eta(eta, &h)?;
        let theta = latents.theta;

        // Collision guard: a pair indistinguishable everywhere (or exactly
        // tied somewhere) would make the true Pareto set ill-defined.
        let mut collision = false;
        'pairs: for i in 0..n {
            for j in i + 1..n {
                let mut all_close = true;
                for ti in 0..t {
                    let d = (theta[(ti, i)] - theta[(ti, j)]).abs();
                    if d == F::zero() {
                        collision = true;
                        break 'pairs;
                    }
                    if d >= config.collision_tolerance {
                        all_close = false;
                    }
                }
                if all_close {
                    collision = true;
                    break 'pairs;
                }
            }
        }
        if collision {
            resamples += 1;
            continue;
        }

        let mu_star = theta.mapv(|v| v.ln());
        return Ok(GroundTruth {
            theta_star: theta,
            mu_star,
            sigma,
            ell,
            nu: config.nu,
            times,
            seed,
            resamples,
        });
    }
    Err(Error::Sampler(
        "ground truth resampling failed to produce distinct trajectories".into(),
    ))
}

impl<F: Float> GroundTruth<F> {
    pub fn n(&self) -> usize {
        self.theta_star.ncols()
    }

    pub fn timepoints(&self) -> usize {
        self.theta_star.nrows()
    }

    /// True pairwise win probability at a grid index.
    pub fn win_probability(&self, i: usize, j: usize, t: usize) -> F {
        self.theta_star[(t, i)] / (self.theta_star[(t, i)] + self.theta_star[(t, j)])
    }
}

/// Exact Plackett-Luce data generator: per instance and timepoint, rank
/// mu*(t) + iid standard Gumbel noise, best first. Fresh noise per
/// timepoint keeps rankings independent across time given the truth.
pub fn simulate_rankings<F: Float, R: Rng + ?Sized>(
    truth: &GroundTruth<F>,
    instances: usize,
    rng: &mut R,
) -> Vec<RankingObservation<F>> {
    let (t, n) = (truth.timepoints(), truth.n());
    let mut out = Vec::with_capacity(instances * t);
    let mut keyed: Vec<(F, usize)> = Vec::with_capacity(n);
    for _ in 0..instances {
        for ti in 0..t {
            keyed.clear();
            for i in 0..n {
                let u: F = truth.mu_star[(ti, i)] + gumbel(rng);
                keyed.push((u, i));
            }
            keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            out.push(RankingObservation::full(
                ti,
                keyed.iter().map(|&(_, i)| i).collect(),
                F::one(),
            ));
        }
    }
    out
}

/// Algorithms not anytime-dominated under the true ratings.
pub fn true_pareto_set<F: Float>(truth: &GroundTruth<F>) -> Vec<usize> {
    let (t, n) = (truth.timepoints(), truth.n());
    let dominated = |a: usize| -> bool {
        (0..n).any(|b| {
            b != a && (0..t).all(|ti| truth.theta_star[(ti, b)] > truth.theta_star[(ti, a)])
        })
    };
    (0..n).filter(|&a| !dominated(a)).collect()
}

// ---------------------------------------------------------------------------
// Toy optimizer testbed
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Landscape {
    Sphere,
    Rastrigin,
    Quadratic,
}

struct ToyInstance {
    id: String,
    dim: usize,
    shift: Vec<f64>,
    scales: Vec<f64>,
    kind: Landscape,
}

impl Instance for ToyInstance {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn domain(&self) -> (f64, f64) {
        (-5.0, 5.0)
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match self.kind {
            Landscape::Sphere => x
                .iter()
                .zip(&self.shift)
                .map(|(xi, s)| (xi - s) * (xi - s))
                .sum(),
            Landscape::Rastrigin => {
                let two_pi = 2.0 * std::f64::consts::PI;
                10.0 * self.dim as f64
                    + x.iter()
                        .zip(&self.shift)
                        .map(|(xi, s)| {
                            let z = xi - s;
                            z * z - 10.0 * (two_pi * z).cos()
                        })
                        .sum::<f64>()
            }
            Landscape::Quadratic => x
                .iter()
                .zip(&self.shift)
                .zip(&self.scales)
                .map(|((xi, s), c)| {
                    let z = xi - s;
                    c * z * z
                })
                .sum(),
        }
    }
}

/// Seeded generator for one landscape family. Instance index 0 of the
/// sphere family keeps its optimum at the origin.
pub struct ToyProvider {
    kind: Landscape,
    dim: usize,
}

impl ToyProvider {
    pub fn sphere(dim: usize) -> Self {
        Self {
            kind: Landscape::Sphere,
            dim,
        }
    }

    pub fn rastrigin(dim: usize) -> Self {
        Self {
            kind: Landscape::Rastrigin,
            dim,
        }
    }

    pub fn quadratic(dim: usize) -> Self {
        Self {
            kind: Landscape::Quadratic,
            dim,
        }
    }
}

impl InstanceProvider for ToyProvider {
    fn name(&self) -> &str {
        match self.kind {
            Landscape::Sphere => "sphere",
            Landscape::Rastrigin => "rastrigin",
            Landscape::Quadratic => "quadratic",
        }
    }

    fn instance(&self, index: u64, seed: u64) -> Box<dyn Instance> {
        let mut rng = crate::stats::derive_rng(seed, &[0x696e_u64, index]);
        let origin = self.kind == Landscape::Sphere && index == 0;
        let shift: Vec<f64> = (0..self.dim)
            .map(|_| {
                if origin {
                    0.0
                } else {
                    rng.random_range(-4.0..4.0)
                }
            })
            .collect();
        let scales: Vec<f64> = (0..self.dim)
            .map(|_| 10f64.powf(rng.random_range(-0.5..1.5)))
            .collect();
        Box::new(ToyInstance {
            id: format!("{}[{}]#{}", self.name(), self.dim, index),
            dim: self.dim,
            shift,
            scales,
            kind: self.kind,
        })
    }
}

/// Look up a built-in instance generator by name.
pub fn provider_by_name(name: &str, dim: usize) -> Result<Box<dyn InstanceProvider>> {
    Ok(match name {
        "sphere" => Box::new(ToyProvider::sphere(dim)),
        "rastrigin" => Box::new(ToyProvider::rastrigin(dim)),
        "quadratic" => Box::new(ToyProvider::quadratic(dim)),
        other => {
            return Err(Error::config(
                "instances.generator",
                format!("unknown generator {other:?}"),
            ))
        }
    })
}

/// Uniform sampling over the box.
pub struct RandomSearch {
    id: String,
}

impl RandomSearch {
    pub fn with_id(id: &str) -> Self {
        Self { id: id.to_string() }
    }
}

impl Default for RandomSearch {
    fn default() -> Self {
        Self::with_id("random_search")
    }
}

impl AnytimeAlgorithm for RandomSearch {
    fn id(&self) -> &str {
        &self.id
    }

    fn run(
        &self,
        instance: &dyn Instance,
        budget: u64,
        seed: u64,
        report: &mut dyn FnMut(u64, f64),
    ) {
        let (lo, hi) = instance.domain();
        let mut rng = crate::stats::derive_rng(seed, &[0x7273_u64]);
        let mut x = vec![0.0; instance.dim()];
        for eval in 1..=budget {
            for xi in x.iter_mut() {
                *xi = rng.random_range(lo..hi);
            }
            report(eval, instance.eval(&x));
        }
    }
}

/// (1+1) evolution strategy with the 1/5 success rule.
pub struct OnePlusOneEs {
    id: String,
}

impl OnePlusOneEs {
    pub fn with_id(id: &str) -> Self {
        Self { id: id.to_string() }
    }
}

impl Default for OnePlusOneEs {
    fn default() -> Self {
        Self::with_id("one_plus_one_es")
    }
}

impl AnytimeAlgorithm for OnePlusOneEs {
    fn id(&self) -> &str {
        &self.id
    }

    fn run(
        &self,
        instance: &dyn Instance,
        budget: u64,
        seed: u64,
        report: &mut dyn FnMut(u64, f64),
    ) {
        if budget == 0 {
            return;
        }
        let (lo, hi) = instance.domain();
        let mut rng = crate::stats::derive_rng(seed, &[0x6573_u64]);
        let mut x: Vec<f64> = (0..instance.dim())
            .map(|_| rng.random_range(lo..hi))
            .collect();
        let mut fx = instance.eval(&x);
        report(1, fx);
        let mut sigma = 0.3 * (hi - lo);
        // Multiplicative 1/5 rule: neutral drift at 20% success.
        let up = 1.5f64;
        let down = 1.5f64.powf(-0.25);
        let mut candidate = x.clone();
        for eval in 2..=budget {
            for (c, xi) in candidate.iter_mut().zip(&x) {
                let z: f64 =
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                *c = (xi + sigma * z).clamp(lo, hi);
            }
            let fc = instance.eval(&candidate);
            report(eval, fc);
            if fc <= fx {
                x.copy_from_slice(&candidate);
                fx = fc;
                sigma = (sigma * up).min(hi - lo);
            } else {
                sigma = (sigma * down).max(1e-12);
            }
        }
    }
}

/// Look up a built-in algorithm by name.
pub fn algorithm_by_name(name: &str) -> Result<Box<dyn AnytimeAlgorithm>> {
    Ok(match name {
        "random_search" => Box::new(RandomSearch::default()),
        "one_plus_one_es" => Box::new(OnePlusOneEs::default()),
        other => {
            return Err(Error::config(
                "algorithms",
                format!("unknown algorithm {other:?}"),
            ))
        }
    })
}

/// The built-in end-to-end testbed: every instance generator at the given
/// dimension plus both built-in optimizers.
pub struct ToyTestbed {
    pub providers: Vec<Box<dyn InstanceProvider>>,
    pub algorithms: Vec<Box<dyn AnytimeAlgorithm>>,
}

pub fn toy_testbed(dim: usize) -> ToyTestbed {
    ToyTestbed {
        providers: vec![
            Box::new(ToyProvider::sphere(dim)),
            Box::new(ToyProvider::rastrigin(dim)),
            Box::new(ToyProvider::quadratic(dim)),
        ],
        algorithms: vec![
            Box::new(RandomSearch::default()),
            Box::new(OnePlusOneEs::default()),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::run_anytime;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> TimeGrid<f64> {
        TimeGrid::uniform(1.0, 10.0, 10).unwrap()
    }

    #[test]
    fn ground_truth_is_reproducible_and_simplex() {
        let a = sample_ground_truth(4, &grid(), &GroundTruthConfig::default(), 33).unwrap();
        let b = sample_ground_truth(4, &grid(), &GroundTruthConfig::default(), 33).unwrap();
        assert_eq!(a.theta_star, b.theta_star);
        for row in a.theta_star.rows() {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn gumbel_rankings_match_win_probabilities() {
        // True first-place rate of the top algorithm matches its rating.
        let truth = {
            let mut t = sample_ground_truth(2, &grid(), &GroundTruthConfig::default(), 7).unwrap();
            // Pin an exact rating for a sharp binomial check.
            t.theta_star = Array2::from_shape_fn((1, 2), |(_, i)| if i == 0 { 0.8 } else { 0.2 });
            t.mu_star = t.theta_star.mapv(f64::ln);
            t.times = vec![1.0];
            t
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 100_000;
        let obs = simulate_rankings(&truth, draws, &mut rng);
        let wins = obs.iter().filter(|o| o.ordering[0] == 0).count() as f64;
        let rate = wins / draws as f64;
        let sd = (0.8 * 0.2 / draws as f64).sqrt();
        assert!((rate - 0.8).abs() < 3.0 * sd, "rate {rate}");
    }

    #[test]
    fn pareto_set_matches_bruteforce() {
        let truth = sample_ground_truth(6, &grid(), &GroundTruthConfig::default(), 19).unwrap();
        let fast = true_pareto_set(&truth);
        // Independent quadratic-loop oracle.
        let (t, n) = (truth.timepoints(), truth.n());
        let mut oracle = Vec::new();
        for a in 0..n {
            let mut dominated = false;
            for b in 0..n {
                if a == b {
                    continue;
                }
                let mut all = true;
                for ti in 0..t {
                    if truth.theta_star[(ti, b)] <= truth.theta_star[(ti, a)] {
                        all = false;
                        break;
                    }
                }
                if all {
                    dominated = true;
                    break;
                }
            }
            if !dominated {
                oracle.push(a);
            }
        }
        assert_eq!(fast, oracle);
        assert!(!fast.is_empty());
    }

    #[test]
    fn crossing_pair_is_jointly_pareto() {
        let mut truth = sample_ground_truth(2, &grid(), &GroundTruthConfig::default(), 3).unwrap();
        let t = truth.timepoints();
        truth.theta_star = Array2::from_shape_fn((t, 2), |(ti, i)| {
            let p = 0.3 + 0.4 * ti as f64 / (t - 1) as f64; // crosses 0.5
            if i == 0 {
                p
            } else {
                1.0 - p
            }
        });
        assert_eq!(true_pareto_set(&truth), vec![0, 1]);
    }

    #[test]
    fn sphere_origin_instance_and_determinism() {
        let provider = ToyProvider::sphere(3);
        let inst = provider.instance(0, 11);
        assert_eq!(inst.eval(&[0.0, 0.0, 0.0]), 0.0);

        let rs = RandomSearch::default();
        let a = run_anytime::<f64>(&rs, inst.as_ref(), 200.0, 9).unwrap();
        let b = run_anytime::<f64>(&rs, inst.as_ref(), 200.0, 9).unwrap();
        assert_eq!(a, b);
        // Best-so-far is non-increasing by construction.
        for w in a.samples.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
    }

    #[test]
    fn es_improves_on_sphere() {
        let provider = ToyProvider::sphere(4);
        let inst = provider.instance(1, 2);
        let es = OnePlusOneEs::default();
        let traj = run_anytime::<f64>(&es, inst.as_ref(), 2000.0, 3).unwrap();
        let first = traj.samples.first().unwrap().1;
        let last = traj.samples.last().unwrap().1;
        assert!(last < first, "{last} !< {first}");
        assert!(last < 1e-3, "ES should approach the optimum, got {last}");
    }

    #[test]
    fn lengthscale_orders_smoothness() {
        // Rank correlation between the drawn lengthscale and an empirical
        // smoothness statistic (negative total variation of theta).
        let grid = TimeGrid::uniform(1.0, 20.0, 30).unwrap();
        let mut ells = Vec::new();
        let mut smoothness = Vec::new();
        for seed in 0..100u64 {
            let truth: GroundTruth<f64> =
                sample_ground_truth(3, &grid, &GroundTruthConfig::default(), 1000 + seed).unwrap();
            let mut tv = 0.0f64;
            for i in 0..truth.n() {
                for ti in 0..truth.timepoints() - 1 {
                    tv += (truth.theta_star[(ti + 1, i)] - truth.theta_star[(ti, i)]).abs();
                }
            }
            ells.push(truth.ell);
            smoothness.push(-tv);
        }
        let rank = |xs: &[f64]| -> Vec<f64> {
            let mut idx: Vec<usize> = (0..xs.len()).collect();
            idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
            let mut r = vec![0.0; xs.len()];
            for (pos, &i) in idx.iter().enumerate() {
                r[i] = pos as f64;
            }
            r
        };
        let ra = rank(&ells);
        let rb = rank(&smoothness);
        let n = ra.len() as f64;
        let ma = ra.iter().sum::<f64>() / n;
        let cov: f64 = ra.iter().zip(&rb).map(|(a, b)| (a - ma) * (b - ma)).sum();
        let va: f64 = ra.iter().map(|a| (a - ma) * (a - ma)).sum();
        let corr = cov / va;
        assert!(corr > 0.3, "rank correlation {corr}");
    }
}
