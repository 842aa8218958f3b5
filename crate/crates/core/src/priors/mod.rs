//! Prior models over the rating trajectories.
//!
//! Every model is a log-density (up to a constant) with analytic gradient
//! over one flat unconstrained parameter vector, plus the transform from
//! that vector to simplex ratings theta(t). Constrained hyperparameters
//! (scales, concentrations) live in log space with their Jacobian terms
//! folded into the density.
//!
//! Simplex-space models (the Dirichlet family) parameterize each timepoint
//! by stick-breaking coordinates. Log-space models place priors on n-1
//! unconstrained latent functions and map them through the Helmert contrast
//! and softmax.

pub mod bspline;
pub mod hsgp;
pub mod kernels;
pub mod stick;

use crate::error::{Error, Result};
use crate::float::Float;
use crate::linalg::{chol_inverse, chol_log_det, chol_solve, cholesky, mat_vec};
use crate::plmodel::{helmert, HelmertMatrix};
use crate::stats::{
    exponential_log_space, inv_gamma_log_space, logistic, lognormal_log_space, softmax_inplace,
    std_normal,
};
use hsgp::{hsgp_basis, HsgpBasis};
use kernels::{gram, gram_dlog_ell, MaternKernel, MaternNu};
use ndarray::Array2;
use rand::Rng;

const LN_2PI: f64 = 1.8378770664093453;

/// Inference space of a model kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    IndependentDirichlet,
    HierarchicalDirichlet,
    GpExact,
    GpHsgp,
    RandomWalk,
    Bspline,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::IndependentDirichlet => "independent_dirichlet",
            ModelKind::HierarchicalDirichlet => "hierarchical_dirichlet",
            ModelKind::GpExact => "gp_exact",
            ModelKind::GpHsgp => "gp_hsgp",
            ModelKind::RandomWalk => "random_walk",
            ModelKind::Bspline => "bspline",
        }
    }

    /// Whether the prior couples timepoints (joint posterior across time).
    pub fn temporal(self) -> bool {
        !matches!(
            self,
            ModelKind::IndependentDirichlet | ModelKind::HierarchicalDirichlet
        )
    }
}

/// One named block of the flat parameter vector.
#[derive(Debug, Clone)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Maps the flat unconstrained vector to named blocks.
#[derive(Debug, Clone, Default)]
pub struct ParamLayout {
    pub blocks: Vec<ParamBlock>,
    pub dim: usize,
}

impl ParamLayout {
    fn push(&mut self, name: impl Into<String>, len: usize) {
        self.blocks.push(ParamBlock {
            name: name.into(),
            offset: self.dim,
            len,
        });
        self.dim += len;
    }

    /// Name of the block containing a flat index.
    pub fn block_of(&self, index: usize) -> &str {
        for b in &self.blocks {
            if index >= b.offset && index < b.offset + b.len {
                return &b.name;
            }
        }
        "out_of_range"
    }
}

/// Hyperpriors for the GP-family kernels: amplitude sigma is log-normal,
/// lengthscale ell is inverse-gamma.
#[derive(Debug, Clone, Copy)]
pub struct GpHyperPriors<F> {
    pub sigma_log_mean: F,
    pub sigma_log_sd: F,
    pub ell_shape: F,
    pub ell_scale: F,
}

impl<F: Float> Default for GpHyperPriors<F> {
    fn default() -> Self {
        Self {
            sigma_log_mean: F::zero(),
            sigma_log_sd: F::cast(0.5),
            ell_shape: F::cast(5.0),
            ell_scale: F::cast(3.0),
        }
    }
}

#[derive(Debug, Clone)]
enum Structure<F> {
    IndependentDirichlet {
        alpha: F,
    },
    HierarchicalDirichlet {
        lambda: F,
    },
    GpExact {
        nu: MaternNu,
        hyper: GpHyperPriors<F>,
    },
    Hsgp {
        nu: MaternNu,
        hyper: GpHyperPriors<F>,
        basis: HsgpBasis<F>,
    },
    RandomWalk {
        sigma_log_mean: F,
        sigma_log_sd: F,
    },
    Bspline {
        design: Array2<F>,
        tau_log_mean: F,
        tau_log_sd: F,
    },
}

/// A prior over rating trajectories for n algorithms at fixed timepoints.
#[derive(Debug, Clone)]
pub struct PriorModel<F> {
    n: usize,
    times: Vec<F>,
    helmert: Option<HelmertMatrix<F>>,
    structure: Structure<F>,
    layout: ParamLayout,
}

impl<F: Float> PriorModel<F> {
    fn check_common(n: usize, times: &[F]) -> Result<()> {
        if n < 2 {
            return Err(Error::invalid("need at least 2 algorithms"));
        }
        if times.is_empty() {
            return Err(Error::invalid("need at least 1 timepoint"));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::invalid("timepoints must be strictly increasing"));
            }
        }
        Ok(())
    }

    pub fn independent_dirichlet(n: usize, times: Vec<F>, alpha: F) -> Result<Self> {
        Self::check_common(n, &times)?;
        if !(alpha > F::zero()) {
            return Err(Error::invalid("alpha must be > 0"));
        }
        let mut layout = ParamLayout::default();
        for t in 0..times.len() {
            layout.push(format!("stick[{t}]"), n - 1);
        }
        Ok(Self {
            n,
            times,
            helmert: None,
            structure: Structure::IndependentDirichlet { alpha },
            layout,
        })
    }

    pub fn hierarchical_dirichlet(n: usize, times: Vec<F>, lambda: F) -> Result<Self> {
        Self::check_common(n, &times)?;
        if !(lambda > F::zero()) {
            return Err(Error::invalid("lambda must be > 0"));
        }
        let mut layout = ParamLayout::default();
        layout.push("log_kappa", 1);
        for t in 0..times.len() {
            layout.push(format!("stick[{t}]"), n - 1);
        }
        Ok(Self {
            n,
            times,
            helmert: None,
            structure: Structure::HierarchicalDirichlet { lambda },
            layout,
        })
    }

    pub fn gp_exact(
        n: usize,
        times: Vec<F>,
        nu: MaternNu,
        hyper: GpHyperPriors<F>,
    ) -> Result<Self> {
        Self::check_common(n, &times)?;
        let mut layout = ParamLayout::default();
        layout.push("log_sigma", 1);
        layout.push("log_lengthscale", 1);
        for q in 0..n - 1 {
            layout.push(format!("latent[{q}]"), times.len());
        }
        Ok(Self {
            n,
            helmert: Some(helmert(n)?),
            times,
            structure: Structure::GpExact { nu, hyper },
            layout,
        })
    }

    pub fn gp_hsgp(
        n: usize,
        times: Vec<F>,
        nu: MaternNu,
        hyper: GpHyperPriors<F>,
        m: usize,
        c: F,
    ) -> Result<Self> {
        Self::check_common(n, &times)?;
        let basis = hsgp_basis(&times, m, c)?;
        let mut layout = ParamLayout::default();
        layout.push("log_sigma", 1);
        layout.push("log_lengthscale", 1);
        for q in 0..n - 1 {
            layout.push(format!("coeff[{q}]"), m);
        }
        Ok(Self {
            n,
            helmert: Some(helmert(n)?),
            times,
            structure: Structure::Hsgp { nu, hyper, basis },
            layout,
        })
    }

    pub fn random_walk(n: usize, times: Vec<F>) -> Result<Self> {
        Self::check_common(n, &times)?;
        let mut layout = ParamLayout::default();
        layout.push("log_sigma", 1);
        for q in 0..n - 1 {
            layout.push(format!("latent[{q}]"), times.len());
        }
        Ok(Self {
            n,
            helmert: Some(helmert(n)?),
            times,
            structure: Structure::RandomWalk {
                sigma_log_mean: F::zero(),
                sigma_log_sd: F::cast(0.5),
            },
            layout,
        })
    }

    pub fn bspline(n: usize, times: Vec<F>, coeffs: usize, degree: usize) -> Result<Self> {
        Self::check_common(n, &times)?;
        let design = bspline::bspline_design(&times, coeffs, degree)?;
        let mut layout = ParamLayout::default();
        layout.push("log_tau", 1);
        for q in 0..n - 1 {
            layout.push(format!("coeff[{q}]"), coeffs);
        }
        Ok(Self {
            n,
            helmert: Some(helmert(n)?),
            times,
            structure: Structure::Bspline {
                design,
                tau_log_mean: F::zero(),
                tau_log_sd: F::cast(0.5),
            },
            layout,
        })
    }

    pub fn kind(&self) -> ModelKind {
        match &self.structure {
            Structure::IndependentDirichlet { .. } => ModelKind::IndependentDirichlet,
            Structure::HierarchicalDirichlet { .. } => ModelKind::HierarchicalDirichlet,
            Structure::GpExact { .. } => ModelKind::GpExact,
            Structure::Hsgp { .. } => ModelKind::GpHsgp,
            Structure::RandomWalk { .. } => ModelKind::RandomWalk,
            Structure::Bspline { .. } => ModelKind::Bspline,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn timepoints(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[F] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// All-zeros reference point: uniform ratings, unit scales.
    pub fn reference_params(&self) -> Vec<F> {
        vec![F::zero(); self.dim()]
    }

    /// Restrict an independent-per-timepoint model to a single timepoint
    /// (used to shard inference). Temporal models return None.
    pub fn slice_timepoint(&self, t: usize) -> Option<Self> {
        match &self.structure {
            Structure::IndependentDirichlet { alpha } => {
                Self::independent_dirichlet(self.n, vec![self.times[t]], *alpha).ok()
            }
            _ => None,
        }
    }

    fn check_dim(&self, params: &[F]) -> Result<()> {
        if params.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: params.len(),
            });
        }
        Ok(())
    }

    /// Latent utilities eta (T x n-1) of a log-space model. Fails when a
    /// hyperparameter coordinate has overflowed to a non-positive scale.
    fn eta_matrix(&self, params: &[F]) -> Result<Array2<F>> {
        let t = self.times.len();
        let q_count = self.n - 1;
        let mut eta = Array2::<F>::zeros((t, q_count));
        match &self.structure {
            Structure::GpExact { .. } | Structure::RandomWalk { .. } => {
                let base = if matches!(self.structure, Structure::GpExact { .. }) {
                    2
                } else {
                    1
                };
                for q in 0..q_count {
                    for ti in 0..t {
                        eta[(ti, q)] = params[base + q * t + ti];
                    }
                }
            }
            Structure::Hsgp { basis, .. } => {
                let m = basis.m();
                let kernel = self.hsgp_kernel(params)?;
                let weights = basis.spectral_weights(&kernel);
                for q in 0..q_count {
                    for ti in 0..t {
                        let mut s = F::zero();
                        for j in 0..m {
                            s += params[2 + q * m + j] * weights[j].sqrt() * basis.phi[(ti, j)];
                        }
                        eta[(ti, q)] = s;
                    }
                }
            }
            Structure::Bspline { design, .. } => {
                let k = design.ncols();
                for q in 0..q_count {
                    for ti in 0..t {
                        let mut s = F::zero();
                        for j in 0..k {
                            s += params[1 + q * k + j] * design[(ti, j)];
                        }
                        eta[(ti, q)] = s;
                    }
                }
            }
            _ => unreachable!("eta_matrix is for log-space models"),
        }
        Ok(eta)
    }

    fn gp_kernel(&self, params: &[F], nu: MaternNu) -> Result<MaternKernel<F>> {
        MaternKernel::new(nu, params[0].exp(), params[1].exp())
    }

    fn hsgp_kernel(&self, params: &[F]) -> Result<MaternKernel<F>> {
        match &self.structure {
            Structure::Hsgp { nu, .. } => self.gp_kernel(params, *nu),
            _ => Err(Error::invalid("not an hsgp model")),
        }
    }

    /// Transform the flat vector to T x n simplex ratings.
    pub fn theta(&self, params: &[F]) -> Result<Array2<F>> {
        self.check_dim(params)?;
        let t = self.times.len();
        let n = self.n;
        let mut theta = Array2::<F>::zeros((t, n));
        match &self.structure {
            Structure::IndependentDirichlet { .. } | Structure::HierarchicalDirichlet { .. } => {
                let base = if matches!(self.structure, Structure::HierarchicalDirichlet { .. }) {
                    1
                } else {
                    0
                };
                let mut row = vec![F::zero(); n];
                for ti in 0..t {
                    let y = &params[base + ti * (n - 1)..base + (ti + 1) * (n - 1)];
                    stick::stick_to_simplex(y, &mut row);
                    for i in 0..n {
                        theta[(ti, i)] = row[i];
                    }
                }
            }
            _ => {
                let eta = self.eta_matrix(params)?;
                let h = self.helmert.as_ref().unwrap();
                let mut row = vec![F::zero(); n];
                for ti in 0..t {
                    let eta_row: Vec<F> = (0..n - 1).map(|q| eta[(ti, q)]).collect();
                    h.expand_row(&eta_row, &mut row);
                    softmax_inplace(&mut row);
                    for i in 0..n {
                        theta[(ti, i)] = row[i];
                    }
                }
            }
        }
        Ok(theta)
    }

    /// Joint log-density of all blocks (latents, hyperparameters, and the
    /// transform Jacobians where applicable) with its gradient.
    pub fn log_prior_grad(&self, params: &[F]) -> Result<(F, Vec<F>)> {
        self.check_dim(params)?;
        let mut grad = vec![F::zero(); self.dim()];
        let t = self.times.len();
        let n = self.n;
        let mut logp = F::zero();

        match &self.structure {
            Structure::IndependentDirichlet { alpha } => {
                for ti in 0..t {
                    let y = &params[ti * (n - 1)..(ti + 1) * (n - 1)];
                    let g = &mut grad[ti * (n - 1)..(ti + 1) * (n - 1)];
                    logp += dirichlet_stick_logp_grad(y, *alpha, g);
                }
                let c = (F::from_usize_(n) * *alpha).ln_gamma_()
                    - F::from_usize_(n) * alpha.ln_gamma_();
                logp += F::from_usize_(t) * c;
            }
            Structure::HierarchicalDirichlet { lambda } => {
                let log_kappa = params[0];
                let kappa = log_kappa.exp();
                let alpha = kappa / F::from_usize_(n);
                let (lp_k, g_k) = exponential_log_space(log_kappa, *lambda);
                logp += lp_k;
                grad[0] += g_k;
                let mut sum_log_theta_total = F::zero();
                for ti in 0..t {
                    let y = &params[1 + ti * (n - 1)..1 + (ti + 1) * (n - 1)];
                    let g = &mut grad[1 + ti * (n - 1)..1 + (ti + 1) * (n - 1)];
                    let (lp, sum_log_theta) = dirichlet_stick_logp_grad_with_sum(y, alpha, g);
                    logp += lp;
                    sum_log_theta_total += sum_log_theta;
                }
                let nf = F::from_usize_(n);
                logp += F::from_usize_(t) * (kappa.ln_gamma_() - nf * alpha.ln_gamma_());
                // d/d log kappa of the Gamma-function terms and the
                // (alpha - 1) * sum(log theta) exponent.
                grad[0] += kappa
                    * (F::from_usize_(t) * (kappa.digamma_() - alpha.digamma_())
                        + sum_log_theta_total / nf);
            }
            Structure::GpExact { nu, hyper } => {
                let kernel = self.gp_kernel(params, *nu)?;
                let (lp_s, g_s) =
                    lognormal_log_space(params[0], hyper.sigma_log_mean, hyper.sigma_log_sd);
                let (lp_l, g_l) =
                    inv_gamma_log_space(params[1], hyper.ell_shape, hyper.ell_scale);
                logp += lp_s + lp_l;
                grad[0] += g_s;
                grad[1] += g_l;

                let k = gram(&kernel, &self.times);
                let l = cholesky(&k)?;
                let log_det = chol_log_det(&l);
                let k_inv = chol_inverse(&l);
                let dk_dl = gram_dlog_ell(&kernel, &self.times);
                // tr(K^-1 dK/dlog_ell)
                let mut trace = F::zero();
                for i in 0..t {
                    for j in 0..t {
                        trace += k_inv[(i, j)] * dk_dl[(j, i)];
                    }
                }
                let q_count = n - 1;
                for q in 0..q_count {
                    let off = 2 + q * t;
                    let eta_q = &params[off..off + t];
                    let alpha_q = chol_solve(&l, eta_q);
                    let quad: F = eta_q.iter().zip(&alpha_q).map(|(&e, &a)| e * a).sum();
                    logp -= F::cast(0.5) * (quad + log_det + F::from_usize_(t) * F::cast(LN_2PI));
                    for i in 0..t {
                        grad[off + i] -= alpha_q[i];
                    }
                    // dK/dlog_sigma = 2K exactly (jitter scales with sigma^2 too).
                    grad[0] += quad - F::from_usize_(t);
                    let d_alpha = mat_vec(&dk_dl, &alpha_q);
                    let quad_l: F = alpha_q.iter().zip(&d_alpha).map(|(&a, &d)| a * d).sum();
                    grad[1] += F::cast(0.5) * (quad_l - trace);
                }
            }
            Structure::Hsgp { hyper, basis, .. } => {
                let (lp_s, g_s) =
                    lognormal_log_space(params[0], hyper.sigma_log_mean, hyper.sigma_log_sd);
                let (lp_l, g_l) =
                    inv_gamma_log_space(params[1], hyper.ell_shape, hyper.ell_scale);
                logp += lp_s + lp_l;
                grad[0] += g_s;
                grad[1] += g_l;
                let m = basis.m();
                let half = F::cast(0.5);
                for q in 0..n - 1 {
                    for j in 0..m {
                        let b = params[2 + q * m + j];
                        logp -= half * (b * b + F::cast(LN_2PI));
                        grad[2 + q * m + j] -= b;
                    }
                }
            }
            Structure::RandomWalk {
                sigma_log_mean,
                sigma_log_sd,
            } => {
                let (lp_s, g_s) = lognormal_log_space(params[0], *sigma_log_mean, *sigma_log_sd);
                logp += lp_s;
                grad[0] += g_s;
                let sigma2 = (F::cast(2.0) * params[0]).exp();
                let half = F::cast(0.5);
                for q in 0..n - 1 {
                    let off = 1 + q * t;
                    // Initial state centered at zero at the innovation scale.
                    let e0 = params[off];
                    logp -= half * (e0 * e0 / sigma2 + sigma2.ln() + F::cast(LN_2PI));
                    grad[off] -= e0 / sigma2;
                    grad[0] += e0 * e0 / sigma2 - F::one();
                    for i in 0..t - 1 {
                        let dt = self.times[i + 1] - self.times[i];
                        let var = sigma2 * dt;
                        let d = params[off + i + 1] - params[off + i];
                        logp -= half * (d * d / var + var.ln() + F::cast(LN_2PI));
                        grad[off + i + 1] -= d / var;
                        grad[off + i] += d / var;
                        grad[0] += d * d / var - F::one();
                    }
                }
            }
            Structure::Bspline {
                design,
                tau_log_mean,
                tau_log_sd,
            } => {
                let (lp_t, g_t) = lognormal_log_space(params[0], *tau_log_mean, *tau_log_sd);
                logp += lp_t;
                grad[0] += g_t;
                let k = design.ncols();
                let tau2 = (F::cast(2.0) * params[0]).exp();
                let half = F::cast(0.5);
                for q in 0..n - 1 {
                    for j in 0..k {
                        let b = params[1 + q * k + j];
                        logp -= half * (b * b / tau2 + tau2.ln() + F::cast(LN_2PI));
                        grad[1 + q * k + j] -= b / tau2;
                        grad[0] += b * b / tau2 - F::one();
                    }
                }
            }
        }
        if !logp.is_finite() {
            let bad = grad
                .iter()
                .position(|g| !g.is_finite())
                .unwrap_or(0);
            return Err(Error::NonFinite {
                block: self.layout.block_of(bad).to_string(),
            });
        }
        Ok((logp, grad))
    }

    /// Accumulate the likelihood chain rule into `grad`: `d_logits` is the
    /// gradient of the log-likelihood with respect to per-timepoint log
    /// ratings (rows sum to zero).
    pub fn add_likelihood_pullback(
        &self,
        params: &[F],
        theta: &Array2<F>,
        d_logits: &Array2<F>,
        grad: &mut [F],
    ) -> Result<()> {
        self.check_dim(params)?;
        let t = self.times.len();
        let n = self.n;
        match &self.structure {
            Structure::IndependentDirichlet { .. } | Structure::HierarchicalDirichlet { .. } => {
                let base = if matches!(self.structure, Structure::HierarchicalDirichlet { .. }) {
                    1
                } else {
                    0
                };
                let _ = theta;
                for ti in 0..t {
                    let y = &params[base + ti * (n - 1)..base + (ti + 1) * (n - 1)];
                    let g = &mut grad[base + ti * (n - 1)..base + (ti + 1) * (n - 1)];
                    // d log theta_j / dy_k: (1 - z_k) at j = k, -z_k for j > k.
                    let mut suffix = F::zero();
                    for j in (0..n).rev() {
                        if j < n - 1 {
                            let shift = F::from_usize_(n - 1 - j).ln();
                            let z = logistic(y[j] - shift);
                            g[j] += (F::one() - z) * d_logits[(ti, j)] - z * suffix;
                        }
                        suffix += d_logits[(ti, j)];
                    }
                }
            }
            _ => {
                let h = self.helmert.as_ref().unwrap();
                // d eta = Q^T d mu, where d mu equals d_logits because the
                // rows of d_logits sum to zero.
                let q_count = n - 1;
                let mut d_eta = Array2::<F>::zeros((t, q_count));
                let mut mu_row = vec![F::zero(); n];
                let mut eta_row = vec![F::zero(); q_count];
                for ti in 0..t {
                    for i in 0..n {
                        mu_row[i] = d_logits[(ti, i)];
                    }
                    h.contract_row(&mu_row, &mut eta_row);
                    for q in 0..q_count {
                        d_eta[(ti, q)] = eta_row[q];
                    }
                }
                match &self.structure {
                    Structure::GpExact { .. } => {
                        for q in 0..q_count {
                            for ti in 0..t {
                                grad[2 + q * t + ti] += d_eta[(ti, q)];
                            }
                        }
                    }
                    Structure::RandomWalk { .. } => {
                        for q in 0..q_count {
                            for ti in 0..t {
                                grad[1 + q * t + ti] += d_eta[(ti, q)];
                            }
                        }
                    }
                    Structure::Hsgp { basis, nu, .. } => {
                        let kernel = self.gp_kernel(params, *nu)?;
                        let weights = basis.spectral_weights(&kernel);
                        let m = basis.m();
                        let half = F::cast(0.5);
                        for q in 0..q_count {
                            for j in 0..m {
                                let mut a = F::zero();
                                for ti in 0..t {
                                    a += d_eta[(ti, q)] * basis.phi[(ti, j)];
                                }
                                let sqrt_w = weights[j].sqrt();
                                let beta = params[2 + q * m + j];
                                grad[2 + q * m + j] += a * sqrt_w;
                                // d sqrt(S)/d log_sigma = sqrt(S);
                                // d sqrt(S)/d log_ell = sqrt(S)/2 * dlnS/dlnl.
                                grad[0] += a * beta * sqrt_w;
                                grad[1] += a
                                    * beta
                                    * sqrt_w
                                    * half
                                    * kernels::spectral_density_dlog_ell(
                                        &kernel,
                                        basis.sqrt_eigenvalues[j],
                                    );
                            }
                        }
                    }
                    Structure::Bspline { design, .. } => {
                        let k = design.ncols();
                        for q in 0..q_count {
                            for j in 0..k {
                                let mut a = F::zero();
                                for ti in 0..t {
                                    a += d_eta[(ti, q)] * design[(ti, j)];
                                }
                                grad[1 + q * k + j] += a;
                            }
                        }
                    }
                    _ => unreachable!(),
                }
            }
        }
        Ok(())
    }

    /// Draw one parameter vector from the prior.
    pub fn sample_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<F>> {
        let t = self.times.len();
        let n = self.n;
        let mut params = vec![F::zero(); self.dim()];
        match &self.structure {
            Structure::IndependentDirichlet { alpha } => {
                for ti in 0..t {
                    let theta = sample_dirichlet::<F, R>(n, alpha.to64(), rng);
                    stick::simplex_to_stick(
                        &theta,
                        &mut params[ti * (n - 1)..(ti + 1) * (n - 1)],
                    );
                }
            }
            Structure::HierarchicalDirichlet { lambda } => {
                let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                let kappa = -u.ln() / lambda.to64();
                params[0] = F::cast(kappa.ln());
                let alpha = kappa / n as f64;
                for ti in 0..t {
                    let theta = sample_dirichlet::<F, R>(n, alpha, rng);
                    stick::simplex_to_stick(
                        &theta,
                        &mut params[1 + ti * (n - 1)..1 + (ti + 1) * (n - 1)],
                    );
                }
            }
            Structure::GpExact { nu, hyper } => {
                params[0] = hyper.sigma_log_mean + hyper.sigma_log_sd * std_normal(rng);
                params[1] = F::cast(sample_inv_gamma(
                    hyper.ell_shape.to64(),
                    hyper.ell_scale.to64(),
                    rng,
                ))
                .ln();
                let kernel = self.gp_kernel(&params, *nu)?;
                let k = gram(&kernel, &self.times);
                let l = cholesky(&k)?;
                for q in 0..n - 1 {
                    let z: Vec<F> = (0..t).map(|_| std_normal(rng)).collect();
                    for i in 0..t {
                        let mut s = F::zero();
                        for j in 0..=i {
                            s += l[(i, j)] * z[j];
                        }
                        params[2 + q * t + i] = s;
                    }
                }
            }
            Structure::Hsgp { hyper, basis, .. } => {
                params[0] = hyper.sigma_log_mean + hyper.sigma_log_sd * std_normal(rng);
                params[1] = F::cast(sample_inv_gamma(
                    hyper.ell_shape.to64(),
                    hyper.ell_scale.to64(),
                    rng,
                ))
                .ln();
                let m = basis.m();
                for i in 0..(n - 1) * m {
                    params[2 + i] = std_normal(rng);
                }
            }
            Structure::RandomWalk {
                sigma_log_mean,
                sigma_log_sd,
            } => {
                params[0] = *sigma_log_mean + *sigma_log_sd * std_normal(rng);
                let sigma = params[0].exp();
                for q in 0..n - 1 {
                    let off = 1 + q * t;
                    params[off] = sigma * std_normal(rng);
                    for i in 0..t - 1 {
                        let sd = sigma * (self.times[i + 1] - self.times[i]).sqrt();
                        params[off + i + 1] = params[off + i] + sd * std_normal::<F, R>(rng);
                    }
                }
            }
            Structure::Bspline { design, .. } => {
                params[0] = F::cast(0.5) * std_normal::<F, R>(rng);
                let tau = params[0].exp();
                let k = design.ncols();
                for i in 0..(n - 1) * k {
                    params[1 + i] = tau * std_normal(rng);
                }
            }
        }
        Ok(params)
    }
}

/// Dirichlet(alpha, ..., alpha) log-density over stick coordinates for one
/// timepoint (Jacobian included, constants dropped), gradient accumulated.
fn dirichlet_stick_logp_grad<F: Float>(y: &[F], alpha: F, grad: &mut [F]) -> F {
    dirichlet_stick_logp_grad_with_sum(y, alpha, grad).0
}

/// As above, also returning sum(log theta) for hyperparameter chains.
fn dirichlet_stick_logp_grad_with_sum<F: Float>(y: &[F], alpha: F, grad: &mut [F]) -> (F, F) {
    let n = y.len() + 1;
    let mut log_rem = F::zero();
    let mut sum_log_theta = F::zero();
    let mut log_jac = F::zero();
    let a1 = alpha - F::one();
    for k in 0..n - 1 {
        let shift = F::from_usize_(n - 1 - k).ln();
        let x = y[k] - shift;
        // ln z and ln(1-z) computed stably from the logit.
        let ln_z = -crate::stats::log1p_exp(-x);
        let ln_1mz = -crate::stats::log1p_exp(x);
        let z = logistic(x);
        sum_log_theta += ln_z + log_rem;
        log_jac += ln_z + ln_1mz + log_rem;
        // d/dy_k of (alpha-1)*sum(log theta): (1-z) at k, -z for each j > k.
        grad[k] += a1 * ((F::one() - z) - F::from_usize_(n - 1 - k) * z);
        // d/dy_k of log|J|.
        grad[k] += F::one() - F::cast(2.0) * z - F::from_usize_(n - 2 - k) * z;
        log_rem += ln_1mz;
    }
    sum_log_theta += log_rem; // theta_{n-1} = remainder
    (a1 * sum_log_theta + log_jac, sum_log_theta)
}

fn sample_dirichlet<F: Float, R: Rng + ?Sized>(n: usize, alpha: f64, rng: &mut R) -> Vec<F> {
    use rand_distr::Distribution;
    let gamma = rand_distr::Gamma::new(alpha, 1.0).expect("alpha > 0");
    let mut draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng).max(1e-300)).collect();
    let total: f64 = draws.iter().sum();
    for d in draws.iter_mut() {
        *d = (*d / total).max(1e-12);
    }
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| F::cast(d / total)).collect()
}

fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    use rand_distr::Distribution;
    let gamma = rand_distr::Gamma::new(shape, 1.0 / scale).expect("shape > 0");
    1.0 / gamma.sample(rng).max(1e-300)
}

/// Serde-friendly model configuration as it appears in race config files.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
#[serde(default)]
pub struct ModelSpec {
    pub kind: String,
    pub alpha: f64,
    pub lambda: f64,
    pub nu: MaternNu,
    pub sigma_log_mean: f64,
    pub sigma_log_sd: f64,
    pub ell_shape: f64,
    pub ell_scale: f64,
    pub basis_size: usize,
    pub boundary_factor: f64,
    pub coeffs: Option<usize>,
    pub degree: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: "gp_exact".to_string(),
            alpha: 1.0,
            lambda: 1.0,
            nu: MaternNu::ThreeHalves,
            sigma_log_mean: 0.0,
            sigma_log_sd: 0.5,
            ell_shape: 5.0,
            ell_scale: 3.0,
            basis_size: 64,
            boundary_factor: 1.5,
            coeffs: None,
            degree: 3,
        }
    }
}

impl ModelSpec {
    pub fn named(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            ..Self::default()
        }
    }

    pub fn build<F: Float>(&self, n: usize, times: Vec<F>) -> Result<PriorModel<F>> {
        let hyper = GpHyperPriors {
            sigma_log_mean: F::cast(self.sigma_log_mean),
            sigma_log_sd: F::cast(self.sigma_log_sd),
            ell_shape: F::cast(self.ell_shape),
            ell_scale: F::cast(self.ell_scale),
        };
        match self.kind.as_str() {
            "independent_dirichlet" => {
                PriorModel::independent_dirichlet(n, times, F::cast(self.alpha))
            }
            "hierarchical_dirichlet" => {
                PriorModel::hierarchical_dirichlet(n, times, F::cast(self.lambda))
            }
            "gp_exact" => PriorModel::gp_exact(n, times, self.nu, hyper),
            "gp_hsgp" => PriorModel::gp_hsgp(
                n,
                times,
                self.nu,
                hyper,
                self.basis_size,
                F::cast(self.boundary_factor),
            ),
            "random_walk" => PriorModel::random_walk(n, times),
            "bspline" => {
                let t = times.len();
                let k = self.coeffs.unwrap_or((t / 2).max(self.degree + 1));
                PriorModel::bspline(n, times, k, self.degree)
            }
            other => Err(Error::config("model.kind", format!("unknown kind {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn times(t: usize) -> Vec<f64> {
        (0..t).map(|i| 1.0 + i as f64).collect()
    }

    fn all_models(n: usize, t: usize) -> Vec<PriorModel<f64>> {
        vec![
            PriorModel::independent_dirichlet(n, times(t), 1.0).unwrap(),
            PriorModel::independent_dirichlet(n, times(t), 2.5).unwrap(),
            PriorModel::hierarchical_dirichlet(n, times(t), 1.0).unwrap(),
            PriorModel::gp_exact(n, times(t), MaternNu::ThreeHalves, Default::default()).unwrap(),
            PriorModel::gp_exact(n, times(t), MaternNu::FiveHalves, Default::default()).unwrap(),
            PriorModel::gp_hsgp(n, times(t), MaternNu::ThreeHalves, Default::default(), 12, 1.5)
                .unwrap(),
            PriorModel::random_walk(n, times(t)).unwrap(),
            PriorModel::bspline(n, times(t), (t / 2).max(4), 3).unwrap(),
        ]
    }

    #[test]
    fn transform_reference_point_is_uniform() {
        for model in all_models(4, 6) {
            let theta = model.theta(&model.reference_params()).unwrap();
            for v in theta.iter() {
                assert!((v - 0.25).abs() < 1e-12, "{:?}", model.kind());
            }
        }
    }

    #[test]
    fn transform_rows_are_simplex_for_random_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for model in all_models(5, 7) {
            for _ in 0..20 {
                let params = model.sample_params(&mut rng).unwrap();
                let theta = model.theta(&params).unwrap();
                for row in theta.rows() {
                    let s: f64 = row.iter().sum();
                    assert!((s - 1.0).abs() < 1e-10, "{:?}", model.kind());
                    assert!(row.iter().all(|v| *v > 0.0 && v.is_finite()));
                }
            }
        }
    }

    #[test]
    fn prior_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for model in all_models(4, 5) {
            for trial in 0..3 {
                let params = model.sample_params(&mut rng).unwrap();
                let (_, grad) = model.log_prior_grad(&params).unwrap();
                let h = 1e-5;
                for d in 0..model.dim() {
                    let mut pp = params.clone();
                    pp[d] += h;
                    let mut pm = params.clone();
                    pm[d] -= h;
                    let (fp, _) = model.log_prior_grad(&pp).unwrap();
                    let (fm, _) = model.log_prior_grad(&pm).unwrap();
                    let fd = (fp - fm) / (2.0 * h);
                    let rel = (grad[d] - fd).abs() / fd.abs().max(1e-4);
                    assert!(
                        rel < 1e-4,
                        "{:?} trial {trial} dim {d} ({}): {} vs {}",
                        model.kind(),
                        model.layout().block_of(d),
                        grad[d],
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn gp_exact_density_at_zero_matches_mvn_oracle() {
        let t = 4;
        let model =
            PriorModel::gp_exact(3, times(t), MaternNu::ThreeHalves, Default::default()).unwrap();
        let params = model.reference_params(); // log sigma = log ell = 0, eta = 0
        let (logp, _) = model.log_prior_grad(&params).unwrap();

        // Oracle: direct MVN evaluation via determinant expansion on the
        // jittered Gram matrix, plus the hyperprior terms at s = l = 0.
        let kernel = MaternKernel::new(MaternNu::ThreeHalves, 1.0, 1.0).unwrap();
        let k = gram(&kernel, &times(t));
        let det = det_gauss(&k);
        let mvn_at_zero = -0.5 * (t as f64 * LN_2PI + det.ln());
        let (lp_s, _) = lognormal_log_space(0.0, 0.0, 0.5);
        let (lp_l, _) = inv_gamma_log_space(0.0, 5.0, 3.0);
        let expect = 2.0 * mvn_at_zero + lp_s + lp_l; // q = n - 1 = 2 latents
        assert!(
            (logp - expect).abs() < 1e-8,
            "logp {logp} vs oracle {expect}"
        );
    }

    fn det_gauss(a: &Array2<f64>) -> f64 {
        let n = a.nrows();
        let mut m = a.clone();
        let mut det = 1.0;
        for i in 0..n {
            let piv = m[(i, i)];
            det *= piv;
            for r in i + 1..n {
                let f = m[(r, i)] / piv;
                for c in i..n {
                    m[(r, c)] -= f * m[(i, c)];
                }
            }
        }
        det
    }

    #[test]
    fn random_walk_increment_density() {
        // T = 2, sigma fixed by pinning the log-sigma coordinate: the
        // conditional density of the increment is Normal(0, sigma^2 dt).
        let model = PriorModel::random_walk(2, vec![1.0, 3.5]).unwrap();
        let (e0, e1) = (0.4, -0.9);
        let mut p = vec![0.0; model.dim()];
        p[1] = e0;
        p[2] = e1;
        let (lp, _) = model.log_prior_grad(&p).unwrap();
        let mut p0 = vec![0.0; model.dim()];
        p0[1] = e0;
        p0[2] = e0; // zero increment reference
        let (lp0, _) = model.log_prior_grad(&p0).unwrap();
        let dt: f64 = 2.5;
        let d: f64 = e1 - e0;
        // Difference isolates the increment term at sigma = 1.
        let want = -0.5 * d * d / dt;
        assert!(((lp - lp0) - want).abs() < 1e-10);
    }

    #[test]
    fn hierarchical_matches_independent_at_fixed_kappa() {
        // kappa = n * alpha makes the conditional stick density identical;
        // gradients with respect to the stick coordinates must agree.
        let n = 4;
        let alpha = 1.7;
        let indep = PriorModel::independent_dirichlet(n, times(3), alpha).unwrap();
        let hier = PriorModel::hierarchical_dirichlet(n, times(3), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = indep.sample_params(&mut rng).unwrap();
        let mut p = vec![0.0; hier.dim()];
        p[0] = (n as f64 * alpha).ln();
        p[1..].copy_from_slice(&y);
        let (_, g_i) = indep.log_prior_grad(&y).unwrap();
        let (_, g_h) = hier.log_prior_grad(&p).unwrap();
        for d in 0..y.len() {
            assert!((g_i[d] - g_h[d + 1]).abs() < 1e-10);
        }
    }

    #[test]
    fn likelihood_pullback_matches_finite_differences() {
        use crate::plmodel::pl_loglik_grad_logits;
        use crate::ranking::RankingObservation;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let observations = vec![
            RankingObservation::full(0, vec![2, 0, 1, 3], 1.0),
            RankingObservation::full(2, vec![1, 3, 0, 2], 0.5),
            RankingObservation::full(4, vec![0, 1, 3, 2], 1.5),
        ];
        for model in all_models(4, 5) {
            let params = model.sample_params(&mut rng).unwrap();
            let eval = |p: &[f64]| -> f64 {
                let theta = model.theta(p).unwrap();
                let logits = theta.mapv(|v| v.ln());
                crate::plmodel::pl_log_likelihood_logits(&observations, &logits.view()).unwrap()
            };
            let theta = model.theta(&params).unwrap();
            let logits = theta.mapv(|v| v.ln());
            let (_, d_logits) = pl_loglik_grad_logits(&observations, &logits.view()).unwrap();
            let mut grad = vec![0.0; model.dim()];
            model
                .add_likelihood_pullback(&params, &theta, &d_logits, &mut grad)
                .unwrap();
            let h = 1e-5;
            for d in 0..model.dim() {
                let mut pp = params.clone();
                pp[d] += h;
                let mut pm = params.clone();
                pm[d] -= h;
                let fd = (eval(&pp) - eval(&pm)) / (2.0 * h);
                assert!(
                    (grad[d] - fd).abs() < 1e-4 * fd.abs().max(1.0),
                    "{:?} dim {d} ({}): {} vs {}",
                    model.kind(),
                    model.layout().block_of(d),
                    grad[d],
                    fd
                );
            }
        }
    }

    #[test]
    fn model_spec_round_trip() {
        let spec = ModelSpec::named("bspline");
        let s = serde_json::to_string(&spec).unwrap();
        let back: ModelSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(spec, back);
        let model: PriorModel<f64> = back.build(3, times(8)).unwrap();
        assert_eq!(model.kind(), ModelKind::Bspline);
        assert!(ModelSpec::named("nope").build::<f64>(3, times(8)).is_err());
    }
}
