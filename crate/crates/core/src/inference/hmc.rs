//! No-U-Turn sampler with dual-averaging step-size adaptation and diagonal
//! mass-matrix estimation during warmup. Multinomial sampling over the
//! doubling trajectory; divergences are transitions whose energy error
//! exceeds a fixed threshold.

use crate::error::{Error, Result};
use crate::stats::derive_rng;
use ndarray::Array2;
use rand::Rng;
use rand_distr::Distribution;
use rayon::prelude::*;

/// Target density for the sampler; positions are handled in f64 regardless
/// of the model scalar type.
pub trait HmcTarget: Sync {
    fn dim(&self) -> usize;
    /// Log density and gradient, or None where the density is not finite.
    fn logp_grad64(&self, x: &[f64]) -> Option<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone)]
pub struct HmcConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub target_accept: f64,
    pub max_treedepth: usize,
    pub init_jitter: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            draws: 2000,
            target_accept: 0.8,
            max_treedepth: 10,
            init_jitter: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChainStats {
    pub divergences: usize,
    pub mean_accept: f64,
    pub step_size: f64,
}

pub struct HmcRun {
    /// Post-warmup draws per chain, draws x dim.
    pub chains: Vec<Array2<f64>>,
    pub stats: Vec<ChainStats>,
}

impl HmcRun {
    pub fn divergences(&self) -> usize {
        self.stats.iter().map(|s| s.divergences).sum()
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.nrows()).sum()
    }

    /// Chain series for one coordinate, for the diagnostics.
    pub fn coordinate_chains(&self, j: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.column(j).to_vec())
            .collect()
    }
}

const DIVERGENCE_THRESHOLD: f64 = 1000.0;

pub fn nuts_sample(
    target: &dyn HmcTarget,
    init: &[f64],
    config: &HmcConfig,
    seed: u64,
) -> Result<HmcRun> {
    if config.chains == 0 || config.draws == 0 {
        return Err(Error::invalid("need at least one chain and one draw"));
    }
    let results: Vec<Result<(Array2<f64>, ChainStats)>> = (0..config.chains)
        .into_par_iter()
        .map(|chain| run_chain(target, init, config, seed, chain))
        .collect();
    let mut chains = Vec::with_capacity(config.chains);
    let mut stats = Vec::with_capacity(config.chains);
    for r in results {
        let (draws, stat) = r?;
        chains.push(draws);
        stats.push(stat);
    }
    Ok(HmcRun { chains, stats })
}

struct DualAveraging {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    m: f64,
    target: f64,
}

impl DualAveraging {
    fn new(eps0: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps0).ln(),
            log_eps: eps0.ln(),
            log_eps_bar: 0.0,
            h_bar: 0.0,
            m: 1.0,
            target,
        }
    }

    fn update(&mut self, accept: f64) {
        const GAMMA: f64 = 0.05;
        const T0: f64 = 10.0;
        const KAPPA: f64 = 0.75;
        let frac = 1.0 / (self.m + T0);
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept);
        self.log_eps = self.mu - self.m.sqrt() / GAMMA * self.h_bar;
        let w = self.m.powf(-KAPPA);
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar;
        self.m += 1.0;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn adapted(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

#[derive(Default)]
struct Welford {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn add(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    /// Regularized variance estimate (shrunk toward 1e-3 at few samples).
    fn variance(&self) -> Option<Vec<f64>> {
        if self.count < 2 {
            return None;
        }
        let n = self.count as f64;
        Some(
            self.m2
                .iter()
                .map(|m2| {
                    let var = m2 / (n - 1.0);
                    (n / (n + 5.0)) * var + (5.0 / (n + 5.0)) * 1e-3
                })
                .collect(),
        )
    }
}

struct Phase {
    /// Iteration indices (within warmup) at which a mass window closes.
    window_ends: Vec<usize>,
}

fn warmup_schedule(warmup: usize) -> Phase {
    // Stan-style: fast start, doubling slow windows, fast tail.
    if warmup < 20 {
        return Phase {
            window_ends: vec![],
        };
    }
    let init_buffer = (0.15 * warmup as f64) as usize;
    let term_buffer = (0.10 * warmup as f64) as usize;
    let mut window = 25usize.min(warmup);
    let mut pos = init_buffer;
    let mut ends = Vec::new();
    while pos + window + term_buffer <= warmup {
        pos += window;
        // Final window absorbs the remainder if doubling would overshoot.
        if pos + 2 * window + term_buffer > warmup {
            pos = warmup - term_buffer;
            ends.push(pos);
            break;
        }
        ends.push(pos);
        window *= 2;
    }
    Phase { window_ends: ends }
}

struct State {
    q: Vec<f64>,
    logp: f64,
    grad: Vec<f64>,
}

fn run_chain(
    target: &dyn HmcTarget,
    init: &[f64],
    config: &HmcConfig,
    seed: u64,
    chain: usize,
) -> Result<(Array2<f64>, ChainStats)> {
    let dim = target.dim();
    let mut rng = derive_rng(seed, &[0x6863_u64, chain as u64]);

    // Jittered start so chains explore from distinct points.
    let mut q: Vec<f64> = init.to_vec();
    for v in q.iter_mut() {
        *v += config.init_jitter * rng.random_range(-1.0..1.0);
    }
    let (logp, grad) = target
        .logp_grad64(&q)
        .ok_or_else(|| Error::Sampler("non-finite density at chain start".into()))?;
    let mut state = State { q, logp, grad };

    let mut inv_mass = vec![1.0; dim];
    let eps0 = find_initial_step(target, &state, &inv_mass, &mut rng);
    let mut da = DualAveraging::new(eps0, config.target_accept);
    let schedule = warmup_schedule(config.warmup);
    let mut welford = Welford::new(dim);
    let mut divergences = 0usize;
    let mut accept_sum = 0.0;
    let mut accept_count = 0usize;

    for it in 0..config.warmup {
        let eps = da.current();
        let out = transition(target, &state, eps, &inv_mass, config.max_treedepth, &mut rng);
        state = out.state;
        da.update(out.accept);
        welford.add(&state.q);
        if schedule.window_ends.contains(&(it + 1)) {
            if let Some(var) = welford.variance() {
                inv_mass = var;
            }
            welford = Welford::new(dim);
            // Re-center step-size adaptation on the new metric.
            let fresh = find_initial_step(target, &state, &inv_mass, &mut rng);
            da = DualAveraging::new(fresh, config.target_accept);
        }
    }
    let eps = if config.warmup > 0 { da.adapted() } else { eps0 };

    let mut draws = Array2::<f64>::zeros((config.draws, dim));
    for s in 0..config.draws {
        let out = transition(target, &state, eps, &inv_mass, config.max_treedepth, &mut rng);
        state = out.state;
        if out.divergent {
            divergences += 1;
        }
        accept_sum += out.accept;
        accept_count += 1;
        for j in 0..dim {
            draws[(s, j)] = state.q[j];
        }
    }
    Ok((
        draws,
        ChainStats {
            divergences,
            mean_accept: accept_sum / accept_count.max(1) as f64,
            step_size: eps,
        },
    ))
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(inv_mass)
        .map(|(pi, im)| pi * pi * im)
        .sum::<f64>()
}

fn draw_momentum<R: Rng>(inv_mass: &[f64], rng: &mut R) -> Vec<f64> {
    let normal = rand_distr::StandardNormal;
    inv_mass
        .iter()
        .map(|im| {
            let z: f64 = normal.sample(rng);
            z / im.sqrt()
        })
        .collect()
}

/// One leapfrog step; returns None when the density is not finite.
fn leapfrog(
    target: &dyn HmcTarget,
    q: &[f64],
    p: &[f64],
    grad: &[f64],
    eps: f64,
    inv_mass: &[f64],
) -> Option<(Vec<f64>, Vec<f64>, f64, Vec<f64>)> {
    let dim = q.len();
    let mut p_half = vec![0.0; dim];
    for i in 0..dim {
        p_half[i] = p[i] + 0.5 * eps * grad[i];
    }
    let mut q_new = vec![0.0; dim];
    for i in 0..dim {
        q_new[i] = q[i] + eps * inv_mass[i] * p_half[i];
    }
    let (logp, grad_new) = target.logp_grad64(&q_new)?;
    let mut p_new = p_half;
    for i in 0..dim {
        p_new[i] += 0.5 * eps * grad_new[i];
    }
    Some((q_new, p_new, logp, grad_new))
}

fn find_initial_step<R: Rng>(
    target: &dyn HmcTarget,
    state: &State,
    inv_mass: &[f64],
    rng: &mut R,
) -> f64 {
    let mut eps = 1.0;
    let p = draw_momentum(inv_mass, rng);
    let h0 = -state.logp + kinetic(&p, inv_mass);
    let ratio_at = |eps: f64| -> Option<f64> {
        let (_, p1, logp1, _) = leapfrog(target, &state.q, &p, &state.grad, eps, inv_mass)?;
        let h1 = -logp1 + kinetic(&p1, inv_mass);
        Some((h0 - h1).exp())
    };
    let mut ratio = match ratio_at(eps) {
        Some(r) => r,
        None => {
            // Shrink until the first step stays finite.
            for _ in 0..60 {
                eps *= 0.5;
                if ratio_at(eps).is_some() {
                    return eps.clamp(1e-10, 1e10);
                }
            }
            return 1e-6;
        }
    };
    let going_up = ratio > 0.5;
    for _ in 0..100 {
        eps = if going_up { eps * 2.0 } else { eps * 0.5 };
        ratio = match ratio_at(eps) {
            Some(r) => r,
            None => {
                eps *= 0.5;
                break;
            }
        };
        if (going_up && ratio <= 0.5) || (!going_up && ratio >= 0.5) {
            break;
        }
        if !(1e-10..=1e10).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-10, 1e10)
}

struct Transition {
    state: State,
    accept: f64,
    divergent: bool,
}

struct TreeEnd {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
}

struct Tree {
    minus: TreeEnd,
    plus: TreeEnd,
    prop_q: Vec<f64>,
    prop_logp: f64,
    prop_grad: Vec<f64>,
    log_sum_w: f64,
    sum_alpha: f64,
    n_alpha: usize,
    divergent: bool,
    turning: bool,
}

fn uturn(minus: &TreeEnd, plus: &TreeEnd, inv_mass: &[f64]) -> bool {
    let dim = minus.q.len();
    let mut fwd = 0.0;
    let mut bwd = 0.0;
    for i in 0..dim {
        let dq = plus.q[i] - minus.q[i];
        fwd += dq * inv_mass[i] * plus.p[i];
        bwd += dq * inv_mass[i] * minus.p[i];
    }
    fwd < 0.0 || bwd < 0.0
}

#[allow(clippy::too_many_arguments)]
fn build_tree<R: Rng>(
    target: &dyn HmcTarget,
    end: &TreeEnd,
    logp: f64,
    depth: usize,
    direction: f64,
    eps: f64,
    h0: f64,
    inv_mass: &[f64],
    rng: &mut R,
) -> Tree {
    if depth == 0 {
        let step = leapfrog(target, &end.q, &end.p, &end.grad, direction * eps, inv_mass);
        return match step {
            Some((q, p, logp_new, grad_new)) => {
                let h = -logp_new + kinetic(&p, inv_mass);
                let log_w = h0 - h;
                let divergent = !(h - h0 <= DIVERGENCE_THRESHOLD);
                let alpha = log_w.exp().min(1.0);
                let leaf = TreeEnd {
                    q: q.clone(),
                    p,
                    grad: grad_new.clone(),
                };
                Tree {
                    minus: TreeEnd {
                        q: leaf.q.clone(),
                        p: leaf.p.clone(),
                        grad: leaf.grad.clone(),
                    },
                    plus: leaf,
                    prop_q: q,
                    prop_logp: logp_new,
                    prop_grad: grad_new,
                    log_sum_w: if divergent { f64::NEG_INFINITY } else { log_w },
                    sum_alpha: if alpha.is_finite() { alpha } else { 0.0 },
                    n_alpha: 1,
                    divergent,
                    turning: false,
                }
            }
            None => Tree {
                minus: TreeEnd {
                    q: end.q.clone(),
                    p: end.p.clone(),
                    grad: end.grad.clone(),
                },
                plus: TreeEnd {
                    q: end.q.clone(),
                    p: end.p.clone(),
                    grad: end.grad.clone(),
                },
                prop_q: end.q.clone(),
                prop_logp: logp,
                prop_grad: end.grad.clone(),
                log_sum_w: f64::NEG_INFINITY,
                sum_alpha: 0.0,
                n_alpha: 1,
                divergent: true,
                turning: false,
            },
        };
    }

    let mut inner = build_tree(
        target,
        end,
        logp,
        depth - 1,
        direction,
        eps,
        h0,
        inv_mass,
        rng,
    );
    if inner.divergent || inner.turning {
        return inner;
    }
    let grow_from = if direction > 0.0 {
        TreeEnd {
            q: inner.plus.q.clone(),
            p: inner.plus.p.clone(),
            grad: inner.plus.grad.clone(),
        }
    } else {
        TreeEnd {
            q: inner.minus.q.clone(),
            p: inner.minus.p.clone(),
            grad: inner.minus.grad.clone(),
        }
    };
    let outer = build_tree(
        target,
        &grow_from,
        inner.prop_logp,
        depth - 1,
        direction,
        eps,
        h0,
        inv_mass,
        rng,
    );

    let log_sum = log_add(inner.log_sum_w, outer.log_sum_w);
    // Multinomial merge: adopt the outer proposal proportionally to its weight.
    if outer.log_sum_w > f64::NEG_INFINITY {
        let p_outer = (outer.log_sum_w - log_sum).exp();
        if rng.random_range(0.0..1.0) < p_outer {
            inner.prop_q = outer.prop_q;
            inner.prop_logp = outer.prop_logp;
            inner.prop_grad = outer.prop_grad;
        }
    }
    if direction > 0.0 {
        inner.plus = outer.plus;
    } else {
        inner.minus = outer.minus;
    }
    inner.log_sum_w = log_sum;
    inner.sum_alpha += outer.sum_alpha;
    inner.n_alpha += outer.n_alpha;
    inner.divergent = outer.divergent;
    inner.turning = outer.turning || uturn(&inner.minus, &inner.plus, inv_mass);
    inner
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn transition<R: Rng>(
    target: &dyn HmcTarget,
    state: &State,
    eps: f64,
    inv_mass: &[f64],
    max_depth: usize,
    rng: &mut R,
) -> Transition {
    let p0 = draw_momentum(inv_mass, rng);
    let h0 = -state.logp + kinetic(&p0, inv_mass);

    let mut tree = Tree {
        minus: TreeEnd {
            q: state.q.clone(),
            p: p0.clone(),
            grad: state.grad.clone(),
        },
        plus: TreeEnd {
            q: state.q.clone(),
            p: p0,
            grad: state.grad.clone(),
        },
        prop_q: state.q.clone(),
        prop_logp: state.logp,
        prop_grad: state.grad.clone(),
        log_sum_w: 0.0,
        sum_alpha: 0.0,
        n_alpha: 0,
        divergent: false,
        turning: false,
    };

    let mut divergent = false;
    for depth in 0..max_depth {
        let direction = if rng.random_range(0.0..1.0) < 0.5 {
            1.0
        } else {
            -1.0
        };
        let end = if direction > 0.0 {
            TreeEnd {
                q: tree.plus.q.clone(),
                p: tree.plus.p.clone(),
                grad: tree.plus.grad.clone(),
            }
        } else {
            TreeEnd {
                q: tree.minus.q.clone(),
                p: tree.minus.p.clone(),
                grad: tree.minus.grad.clone(),
            }
        };
        let sub = build_tree(
            target,
            &end,
            tree.prop_logp,
            depth,
            direction,
            eps,
            h0,
            inv_mass,
            rng,
        );
        tree.sum_alpha += sub.sum_alpha;
        tree.n_alpha += sub.n_alpha;
        if sub.divergent {
            divergent = true;
            break;
        }
        if sub.turning {
            break;
        }
        // Biased progressive sampling toward the fresh subtree.
        let p_new = (sub.log_sum_w - tree.log_sum_w).exp().min(1.0);
        if rng.random_range(0.0..1.0) < p_new {
            tree.prop_q = sub.prop_q;
            tree.prop_logp = sub.prop_logp;
            tree.prop_grad = sub.prop_grad;
        }
        if direction > 0.0 {
            tree.plus = sub.plus;
        } else {
            tree.minus = sub.minus;
        }
        tree.log_sum_w = log_add(tree.log_sum_w, sub.log_sum_w);
        if uturn(&tree.minus, &tree.plus, inv_mass) {
            break;
        }
    }

    let accept = if tree.n_alpha > 0 {
        tree.sum_alpha / tree.n_alpha as f64
    } else {
        0.0
    };
    Transition {
        state: State {
            q: tree.prop_q,
            logp: tree.prop_logp,
            grad: tree.prop_grad,
        },
        accept,
        divergent,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::diag::{effective_sample_size, split_rhat};

    struct StdNormal {
        dim: usize,
    }

    impl HmcTarget for StdNormal {
        fn dim(&self) -> usize {
            self.dim
        }
        fn logp_grad64(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
            let lp = -0.5 * x.iter().map(|v| v * v).sum::<f64>();
            Some((lp, x.iter().map(|v| -v).collect()))
        }
    }

    struct CorrelatedGaussian {
        rho: f64,
    }

    impl HmcTarget for CorrelatedGaussian {
        fn dim(&self) -> usize {
            2
        }
        fn logp_grad64(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
            // Precision of [[1, rho], [rho, 1]].
            let det = 1.0 - self.rho * self.rho;
            let (a, b) = (1.0 / det, -self.rho / det);
            let lp = -0.5 * (a * x[0] * x[0] + 2.0 * b * x[0] * x[1] + a * x[1] * x[1]);
            Some((lp, vec![-(a * x[0] + b * x[1]), -(b * x[0] + a * x[1])]))
        }
    }

    #[test]
    fn standard_normal_moments() {
        let target = StdNormal { dim: 3 };
        let config = HmcConfig {
            chains: 2,
            warmup: 400,
            draws: 800,
            ..Default::default()
        };
        let run = nuts_sample(&target, &[0.0; 3], &config, 99).unwrap();
        assert_eq!(run.divergences(), 0);
        for j in 0..3 {
            let chains = run.coordinate_chains(j);
            let all: Vec<f64> = chains.iter().flatten().copied().collect();
            let n = all.len() as f64;
            let mean = all.iter().sum::<f64>() / n;
            let var = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let ess = effective_sample_size(&chains).max(16.0);
            assert!(mean.abs() < 4.0 / ess.sqrt(), "mean {mean}, ess {ess}");
            assert!((var - 1.0).abs() < 0.1, "var {var}");
            assert!(split_rhat(&chains) < 1.01);
        }
    }

    #[test]
    fn correlated_gaussian_covariance() {
        let target = CorrelatedGaussian { rho: 0.9 };
        let config = HmcConfig {
            chains: 2,
            warmup: 500,
            draws: 1500,
            ..Default::default()
        };
        let run = nuts_sample(&target, &[0.0, 0.0], &config, 4).unwrap();
        let xs: Vec<f64> = run
            .chains
            .iter()
            .flat_map(|c| c.column(0).to_vec())
            .collect();
        let ys: Vec<f64> = run
            .chains
            .iter()
            .flat_map(|c| c.column(1).to_vec())
            .collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let cov = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / (n - 1.0);
        let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / (n - 1.0);
        let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((vx - 1.0).abs() < 0.1, "var x {vx}");
        assert!((vy - 1.0).abs() < 0.1, "var y {vy}");
        assert!((cov - 0.9).abs() < 0.1, "cov {cov}");
    }

    #[test]
    fn seeded_runs_are_identical() {
        let target = StdNormal { dim: 2 };
        let config = HmcConfig {
            chains: 2,
            warmup: 100,
            draws: 100,
            ..Default::default()
        };
        let a = nuts_sample(&target, &[0.1, 0.2], &config, 7).unwrap();
        let b = nuts_sample(&target, &[0.1, 0.2], &config, 7).unwrap();
        for (ca, cb) in a.chains.iter().zip(&b.chains) {
            assert_eq!(ca, cb);
        }
    }
}
