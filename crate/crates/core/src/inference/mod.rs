//! Posterior inference: combine a prior model with ranking observations and
//! produce simplex-valued rating draws.
//!
//! Two paths: MAP + Laplace (fast, optimization only) and NUTS (accurate).
//! Every refit is a full refit of the whole archive; sequential posterior
//! approximations are deliberately avoided. Results are flagged rather than
//! discarded when diagnostics fail, so a race can proceed conservatively.

pub mod diag;
pub mod hmc;
pub mod laplace;
pub mod map;

use crate::error::{Error, Result};
use crate::float::Float;
use crate::plmodel::{pl_log_likelihood_logits, pl_loglik_grad_logits};
use crate::priors::{ModelKind, PriorModel};
use crate::ranking::RankingObservation;
use crate::stats::derive_rng;
use hmc::{HmcConfig, HmcTarget};
use map::{map_estimate, MapConfig};
use ndarray::{Array2, Array3};
use rayon::prelude::*;

/// How a set of rating draws was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Laplace,
    Hmc,
    /// Exact draws from the prior (empty archive).
    Prior,
}

/// Whether draws carry correlation across timepoints or are stitched from
/// per-timepoint marginals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointStructure {
    Joint,
    ProductOfMarginals,
}

/// Convergence evidence attached to a posterior.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct Diagnostics {
    pub converged: bool,
    pub notes: Vec<String>,
    /// Split R-hat per unconstrained parameter (HMC only).
    pub rhat: Option<Vec<f64>>,
    /// Effective sample size per unconstrained parameter (HMC only).
    pub ess: Option<Vec<f64>>,
    pub divergences: usize,
    pub map_grad_norm: Option<f64>,
    pub laplace_ridge: Option<f64>,
}

/// Posterior draws of the rating tensor: S draws of T x n simplex rows.
#[derive(Debug, Clone)]
pub struct RatingSamples<F> {
    samples: Array3<F>,
    pub method: Method,
    pub joint: JointStructure,
    pub diagnostics: Diagnostics,
}

impl<F: Float> RatingSamples<F> {
    pub fn new(
        samples: Array3<F>,
        method: Method,
        joint: JointStructure,
        diagnostics: Diagnostics,
    ) -> Result<Self> {
        let (s, _t, _n) = samples.dim();
        if s == 0 {
            return Err(Error::invalid("need at least one draw"));
        }
        let tol = F::cast(1e-8);
        for draw in samples.outer_iter() {
            for row in draw.rows() {
                let total: F = row.iter().cloned().sum();
                if (total - F::one()).abs() > tol {
                    return Err(Error::NotSimplex((total - F::one()).to64()));
                }
            }
        }
        Ok(Self {
            samples,
            method,
            joint,
            diagnostics,
        })
    }

    pub fn draws(&self) -> usize {
        self.samples.dim().0
    }

    pub fn timepoints(&self) -> usize {
        self.samples.dim().1
    }

    pub fn n(&self) -> usize {
        self.samples.dim().2
    }

    pub fn theta(&self, draw: usize, t: usize, algo: usize) -> F {
        self.samples[(draw, t, algo)]
    }

    pub fn array(&self) -> &Array3<F> {
        &self.samples
    }

    /// Posterior mean rating of one algorithm at one timepoint.
    pub fn mean(&self, t: usize, algo: usize) -> F {
        let s = self.draws();
        let mut acc = F::zero();
        for d in 0..s {
            acc += self.samples[(d, t, algo)];
        }
        acc / F::from_usize_(s)
    }

    /// Posterior mean rating matrix (T x n).
    pub fn mean_matrix(&self) -> Array2<F> {
        let (s, t, n) = self.samples.dim();
        let mut out = Array2::<F>::zeros((t, n));
        for d in 0..s {
            for ti in 0..t {
                for i in 0..n {
                    out[(ti, i)] += self.samples[(d, ti, i)];
                }
            }
        }
        out.mapv_into(|v| v / F::from_usize_(s))
    }

    /// Empirical quantile of one rating across draws.
    pub fn rating_quantile(&self, t: usize, algo: usize, gamma: F) -> F {
        let mut xs: Vec<F> = (0..self.draws())
            .map(|d| self.samples[(d, t, algo)])
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        crate::stats::quantile(&xs, gamma)
    }
}

/// A prior model paired with observations: the unnormalized log posterior
/// over the flat unconstrained vector.
pub struct Posterior<'a, F: Float> {
    model: &'a PriorModel<F>,
    observations: &'a [RankingObservation<F>],
}

impl<'a, F: Float> Posterior<'a, F> {
    pub fn new(model: &'a PriorModel<F>, observations: &'a [RankingObservation<F>]) -> Self {
        Self {
            model,
            observations,
        }
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn model(&self) -> &PriorModel<F> {
        self.model
    }

    /// Log density and gradient; structural failures (Cholesky, overflow)
    /// surface as errors naming the parameter block.
    pub fn logp_grad(&self, params: &[F]) -> Result<(F, Vec<F>)> {
        let (mut logp, mut grad) = self.model.log_prior_grad(params)?;
        if !self.observations.is_empty() {
            let theta = self.model.theta(params)?;
            let logits = theta.mapv(|v| v.ln());
            let (ll, d_logits) = pl_loglik_grad_logits(self.observations, &logits.view())?;
            self.model
                .add_likelihood_pullback(params, &theta, &d_logits, &mut grad)?;
            logp += ll;
        }
        Ok((logp, grad))
    }

    /// Like `logp_grad`, but mapping structural failures to None so line
    /// searches and samplers can reject the point.
    pub fn try_logp_grad(&self, params: &[F]) -> Option<(F, Vec<F>)> {
        match self.logp_grad(params) {
            Ok((lp, g)) if lp.is_finite() => Some((lp, g)),
            _ => None,
        }
    }

    /// Log likelihood alone at given ratings (diagnostic use).
    pub fn log_likelihood_at(&self, theta: &Array2<F>) -> Result<F> {
        let logits = theta.mapv(|v| v.ln());
        pl_log_likelihood_logits(self.observations, &logits.view())
    }
}

impl<F: Float> HmcTarget for Posterior<'_, F> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn logp_grad64(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let params: Vec<F> = x.iter().map(|&v| F::cast(v)).collect();
        let (lp, g) = self.try_logp_grad(&params)?;
        Some((lp.to64(), g.iter().map(|v| v.to64()).collect()))
    }
}

/// Inference settings shared by both methods.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
#[serde(default)]
pub struct InferenceConfig {
    /// None picks the model default: Laplace for the Dirichlet family,
    /// HMC for temporal models.
    pub method: Option<Method>,
    /// Laplace draw count, and HMC draws per chain.
    pub draws: usize,
    pub chains: usize,
    pub warmup: usize,
    pub target_accept: f64,
    pub max_treedepth: usize,
    /// Fit per-timepoint shards of an independent model concurrently.
    pub shard_timepoints: bool,
    /// Floor on total posterior draws for decision use.
    pub min_draws: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            method: None,
            draws: 2000,
            chains: 4,
            warmup: 1000,
            target_accept: 0.8,
            max_treedepth: 10,
            shard_timepoints: true,
            min_draws: 1000,
        }
    }
}

impl InferenceConfig {
    fn resolve_method<F: Float>(&self, model: &PriorModel<F>) -> Method {
        self.method.unwrap_or(match model.kind() {
            ModelKind::IndependentDirichlet | ModelKind::HierarchicalDirichlet => Method::Laplace,
            _ => Method::Hmc,
        })
    }

    fn total_draws(&self, method: Method) -> usize {
        match method {
            Method::Hmc => self.chains * self.draws,
            _ => self.draws,
        }
    }
}

fn joint_structure<F: Float>(model: &PriorModel<F>) -> JointStructure {
    if model.kind() == ModelKind::IndependentDirichlet {
        JointStructure::ProductOfMarginals
    } else {
        JointStructure::Joint
    }
}

/// Full posterior refit: produce rating draws for the archive under the
/// model. An empty archive yields exact prior draws.
pub fn posterior_update<F: Float>(
    archive: &[RankingObservation<F>],
    model: &PriorModel<F>,
    config: &InferenceConfig,
    seed: u64,
) -> Result<RatingSamples<F>> {
    let method = config.resolve_method(model);
    let total = config.total_draws(method);
    if total < config.min_draws {
        return Err(Error::config(
            "inference.draws",
            format!(
                "{total} total draws is below the configured floor of {}",
                config.min_draws
            ),
        ));
    }
    for o in archive {
        if o.timepoint >= model.timepoints() {
            return Err(Error::DimensionMismatch {
                expected: model.timepoints(),
                got: o.timepoint + 1,
            });
        }
    }

    if archive.is_empty() {
        return prior_samples(model, total, seed);
    }

    if model.kind() == ModelKind::IndependentDirichlet
        && config.shard_timepoints
        && model.timepoints() > 1
    {
        return sharded_update(archive, model, config, method, seed);
    }

    match method {
        Method::Laplace | Method::Prior => laplace_update(archive, model, config, seed),
        Method::Hmc => hmc_update(archive, model, config, seed),
    }
}

fn prior_samples<F: Float>(
    model: &PriorModel<F>,
    draws: usize,
    seed: u64,
) -> Result<RatingSamples<F>> {
    let mut rng = derive_rng(seed, &[0x7072_u64]);
    let (t, n) = (model.timepoints(), model.n());
    let mut samples = Array3::<F>::zeros((draws, t, n));
    for s in 0..draws {
        let params = model.sample_params(&mut rng)?;
        let theta = model.theta(&params)?;
        for ti in 0..t {
            for i in 0..n {
                samples[(s, ti, i)] = theta[(ti, i)];
            }
        }
    }
    RatingSamples::new(
        samples,
        Method::Prior,
        joint_structure(model),
        Diagnostics {
            converged: true,
            ..Default::default()
        },
    )
}

fn laplace_update<F: Float>(
    archive: &[RankingObservation<F>],
    model: &PriorModel<F>,
    config: &InferenceConfig,
    seed: u64,
) -> Result<RatingSamples<F>> {
    let posterior = Posterior::new(model, archive);
    let init = model.reference_params();
    let map = map_estimate(&posterior, &init, &MapConfig::default())?;
    let mut rng = derive_rng(seed, &[0x6c61_u64]);
    let ld = laplace::laplace_sample(&posterior, &map.params, config.draws, &mut rng)?;

    let (t, n) = (model.timepoints(), model.n());
    let mut samples = Array3::<F>::zeros((config.draws, t, n));
    let mut params = vec![F::zero(); model.dim()];
    for s in 0..config.draws {
        for j in 0..model.dim() {
            params[j] = ld.draws[(s, j)];
        }
        let theta = model.theta(&params)?;
        for ti in 0..t {
            for i in 0..n {
                samples[(s, ti, i)] = theta[(ti, i)];
            }
        }
    }
    let mut notes = Vec::new();
    // A mode pinned to the arithmetic's resolution is fine for the Gaussian
    // approximation even when the strict tolerance was not reached; the
    // attainable gradient norm scales with the density's magnitude.
    let mode_ok = map.converged || map.grad_norm < 1e-4 * (1.0 + map.log_density.to64().abs());
    if !mode_ok {
        notes.push(format!(
            "map did not reach gradient tolerance (|g| = {:.3e})",
            map.grad_norm
        ));
    }
    if ld.ridge > laplace::RIDGE_WARN_THRESHOLD {
        notes.push(format!(
            "posterior strongly non-Gaussian (hessian ridge {:.3e}); prefer hmc",
            ld.ridge
        ));
    }
    let converged = mode_ok && ld.ridge <= laplace::RIDGE_WARN_THRESHOLD;
    RatingSamples::new(
        samples,
        Method::Laplace,
        joint_structure(model),
        Diagnostics {
            converged,
            notes,
            map_grad_norm: Some(map.grad_norm),
            laplace_ridge: Some(ld.ridge),
            ..Default::default()
        },
    )
}

fn hmc_update<F: Float>(
    archive: &[RankingObservation<F>],
    model: &PriorModel<F>,
    config: &InferenceConfig,
    seed: u64,
) -> Result<RatingSamples<F>> {
    let posterior = Posterior::new(model, archive);
    let hmc_config = HmcConfig {
        chains: config.chains,
        warmup: config.warmup,
        draws: config.draws,
        target_accept: config.target_accept,
        max_treedepth: config.max_treedepth,
        init_jitter: 1.0,
    };
    let init = vec![0.0f64; model.dim()];
    let run = hmc::nuts_sample(&posterior, &init, &hmc_config, seed)?;

    let dim = model.dim();
    let mut rhat = Vec::with_capacity(dim);
    let mut ess = Vec::with_capacity(dim);
    for j in 0..dim {
        let chains = run.coordinate_chains(j);
        rhat.push(diag::split_rhat(&chains));
        ess.push(diag::effective_sample_size(&chains));
    }
    let divergences = run.divergences();
    let total = run.total_draws();
    let max_rhat = rhat.iter().cloned().fold(0.0f64, f64::max);
    let divergence_rate = divergences as f64 / total as f64;
    let mut notes = Vec::new();
    if divergence_rate > 0.01 {
        notes.push(format!(
            "{divergences} divergent transitions ({:.2}%)",
            100.0 * divergence_rate
        ));
    }
    if max_rhat > 1.01 {
        notes.push(format!("max split R-hat {max_rhat:.4} exceeds 1.01"));
    }
    let converged = divergence_rate <= 0.01 && max_rhat <= 1.01;

    let (t, n) = (model.timepoints(), model.n());
    let mut samples = Array3::<F>::zeros((total, t, n));
    let mut params = vec![F::zero(); dim];
    let mut s = 0;
    for chain in &run.chains {
        for row in chain.outer_iter() {
            for j in 0..dim {
                params[j] = F::cast(row[j]);
            }
            let theta = model.theta(&params)?;
            for ti in 0..t {
                for i in 0..n {
                    samples[(s, ti, i)] = theta[(ti, i)];
                }
            }
            s += 1;
        }
    }
    RatingSamples::new(
        samples,
        Method::Hmc,
        joint_structure(model),
        Diagnostics {
            converged,
            notes,
            rhat: Some(rhat),
            ess: Some(ess),
            divergences,
            ..Default::default()
        },
    )
}

/// Independent-per-timepoint model: fit each timepoint separately (in
/// parallel) and stitch the draws, which makes the joint an explicit
/// product of marginals.
fn sharded_update<F: Float>(
    archive: &[RankingObservation<F>],
    model: &PriorModel<F>,
    config: &InferenceConfig,
    method: Method,
    seed: u64,
) -> Result<RatingSamples<F>> {
    let t = model.timepoints();
    let n = model.n();
    let shard_config = InferenceConfig {
        shard_timepoints: false,
        method: Some(method),
        ..config.clone()
    };
    let results: Vec<Result<RatingSamples<F>>> = (0..t)
        .into_par_iter()
        .map(|ti| {
            let sub = model
                .slice_timepoint(ti)
                .ok_or_else(|| Error::invalid("model does not shard over timepoints"))?;
            let obs: Vec<RankingObservation<F>> = archive
                .iter()
                .filter(|o| o.timepoint == ti)
                .map(|o| RankingObservation {
                    timepoint: 0,
                    ordering: o.ordering.clone(),
                    pool: o.pool.clone(),
                    weight: o.weight,
                })
                .collect();
            posterior_update(&obs, &sub, &shard_config, crate::stats::mix64(seed ^ ti as u64))
        })
        .collect();

    let mut shards = Vec::with_capacity(t);
    let mut converged = true;
    let mut notes = Vec::new();
    let mut grad_norm_worst: Option<f64> = None;
    let mut ridge_worst: Option<f64> = None;
    for (ti, r) in results.into_iter().enumerate() {
        let shard = r?;
        if !shard.diagnostics.converged {
            converged = false;
            for note in &shard.diagnostics.notes {
                notes.push(format!("t[{ti}]: {note}"));
            }
        }
        if let Some(g) = shard.diagnostics.map_grad_norm {
            grad_norm_worst = Some(grad_norm_worst.map_or(g, |w: f64| w.max(g)));
        }
        if let Some(r) = shard.diagnostics.laplace_ridge {
            ridge_worst = Some(ridge_worst.map_or(r, |w: f64| w.max(r)));
        }
        shards.push(shard);
    }
    let draws = shards.iter().map(|s| s.draws()).min().unwrap();
    let mut samples = Array3::<F>::zeros((draws, t, n));
    for (ti, shard) in shards.iter().enumerate() {
        for s in 0..draws {
            for i in 0..n {
                samples[(s, ti, i)] = shard.theta(s, 0, i);
            }
        }
    }
    let method_used = shards
        .first()
        .map(|s| s.method)
        .unwrap_or(Method::Laplace);
    RatingSamples::new(
        samples,
        method_used,
        JointStructure::ProductOfMarginals,
        Diagnostics {
            converged,
            notes,
            map_grad_norm: grad_norm_worst,
            laplace_ridge: ridge_worst,
            ..Default::default()
        },
    )
}
