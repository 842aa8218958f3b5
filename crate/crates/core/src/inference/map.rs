//! Quasi-Newton posterior mode search: L-BFGS with backtracking line search.

use crate::error::{Error, Result};
use crate::float::Float;
use crate::inference::Posterior;
use crate::linalg::{dot, norm2};
use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct MapConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub memory: usize,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            grad_tol: 1e-6,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MapResult<F> {
    pub params: Vec<F>,
    pub log_density: F,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Ascend the log posterior from `init`. Trial points where the density is
/// not finite are rejected by the line search; a non-finite density at the
/// starting point is an error naming the offending block.
pub fn map_estimate<F: Float>(
    posterior: &Posterior<'_, F>,
    init: &[F],
    config: &MapConfig,
) -> Result<MapResult<F>> {
    let dim = posterior.dim();
    if init.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: init.len(),
        });
    }
    let mut x = init.to_vec();
    let (mut fx, mut gx) = posterior.logp_grad(&x)?;
    if !fx.is_finite() {
        return Err(Error::NonFinite {
            block: "posterior at init".to_string(),
        });
    }

    // Minimize f = -logp; store (s, y) pairs for the two-loop recursion.
    let mut history: VecDeque<(Vec<F>, Vec<F>)> = VecDeque::new();
    let mut iterations = 0;
    let grad_tol = F::cast(config.grad_tol);
    let mut stalled_iters = 0usize;

    for iter in 0..config.max_iters {
        iterations = iter + 1;
        let neg_grad: Vec<F> = gx.iter().map(|&g| -g).collect(); // gradient of f
        if norm2(&neg_grad) < grad_tol {
            iterations = iter;
            break;
        }

        // Two-loop recursion on f's gradient.
        let mut direction = neg_grad.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y) in history.iter().rev() {
            let rho = F::one() / dot(y, s);
            let a = rho * dot(s, &direction);
            for (d, yi) in direction.iter_mut().zip(y) {
                *d -= a * *yi;
            }
            alphas.push((a, rho));
        }
        if let Some((s, y)) = history.back() {
            let scale = dot(s, y) / dot(y, y);
            for d in direction.iter_mut() {
                *d *= scale;
            }
        }
        for ((s, y), &(a, rho)) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &direction);
            for (d, si) in direction.iter_mut().zip(s) {
                *d += (a - b) * *si;
            }
        }
        // direction now approximates H^-1 grad(f); descend along -direction.
        for d in direction.iter_mut() {
            *d = -*d;
        }
        let mut descent = dot(&direction, &neg_grad);
        if !(descent < F::zero()) {
            // Not a descent direction; fall back to steepest descent.
            direction = neg_grad.iter().map(|&g| -g).collect();
            descent = -dot(&neg_grad, &neg_grad);
            history.clear();
        }

        // Backtracking Armijo line search on f = -logp.
        let mut step = if history.is_empty() {
            F::one() / norm2(&neg_grad).max(F::one())
        } else {
            F::one()
        };
        let c1 = F::cast(1e-4);
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<F> = x
                .iter()
                .zip(&direction)
                .map(|(&xi, &di)| xi + step * di)
                .collect();
            match posterior.try_logp_grad(&trial) {
                // Armijo on f: f_trial <= f_x + c1*step*descent.
                Some((ft, gt)) if ft.is_finite() && -ft <= -fx + c1 * step * descent => {
                    let s: Vec<F> = trial.iter().zip(&x).map(|(a, b)| *a - *b).collect();
                    let y: Vec<F> = gt
                        .iter()
                        .zip(&gx)
                        .map(|(gn, go)| -(*gn) - -(*go))
                        .collect();
                    if dot(&s, &y) > F::cast(1e-10) * norm2(&s) * norm2(&y) {
                        history.push_back((s, y));
                        if history.len() > config.memory {
                            history.pop_front();
                        }
                    }
                    let improvement = ft - fx;
                    x = trial;
                    fx = ft;
                    gx = gt;
                    accepted = true;
                    // Improvements at the resolution of f itself mean the
                    // mode is pinned as tightly as the arithmetic allows.
                    if improvement <= F::cast(1e-12) * (F::one() + fx.abs()) {
                        stalled_iters += 1;
                    } else {
                        stalled_iters = 0;
                    }
                    break;
                }
                _ => {}
            }
            step *= F::cast(0.5);
        }
        if !accepted || stalled_iters >= 3 {
            break; // at the numerical floor; report what we have
        }
    }

    let grad_norm = norm2(&gx).to64();
    Ok(MapResult {
        converged: grad_norm < config.grad_tol,
        params: x,
        log_density: fx,
        grad_norm,
        iterations,
    })
}
