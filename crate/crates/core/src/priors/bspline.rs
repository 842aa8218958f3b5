//! Clamped B-spline design matrices with knots at timepoint quantiles.

use crate::error::{Error, Result};
use crate::float::Float;
use crate::stats::quantile;
use ndarray::Array2;

/// Knot vector for `k` coefficients of the given degree: endpoint knots with
/// multiplicity degree+1, interior knots at quantiles of the timepoints.
pub fn quantile_knots<F: Float>(times: &[F], k: usize, degree: usize) -> Result<Vec<F>> {
    if k < degree + 1 {
        return Err(Error::invalid(format!(
            "need at least degree+1 = {} coefficients, got {k}",
            degree + 1
        )));
    }
    let first = times[0];
    let last = times[times.len() - 1];
    let mut knots = Vec::with_capacity(k + degree + 1);
    for _ in 0..=degree {
        knots.push(first);
    }
    let interior = k - degree - 1;
    for i in 1..=interior {
        let q = F::from_usize_(i) / F::from_usize_(interior + 1);
        knots.push(quantile(times, q));
    }
    for _ in 0..=degree {
        knots.push(last);
    }
    Ok(knots)
}

/// Evaluate all `k` basis functions at `t` by the Cox-de Boor recursion.
fn basis_row<F: Float>(knots: &[F], k: usize, degree: usize, t: F) -> Vec<F> {
    let mut b = vec![F::zero(); knots.len() - 1];
    let last = knots[knots.len() - 1];
    // Degree-0 indicators; the right endpoint belongs to the final span.
    for j in 0..b.len() {
        let in_span = if t == last {
            knots[j] <= t && t <= knots[j + 1] && knots[j] < knots[j + 1]
        } else {
            knots[j] <= t && t < knots[j + 1]
        };
        if in_span {
            b[j] = F::one();
        }
    }
    if t == last {
        // Only the last nonempty span may carry the indicator.
        let mut seen = false;
        for j in (0..b.len()).rev() {
            if b[j] == F::one() {
                if seen {
                    b[j] = F::zero();
                } else {
                    seen = true;
                }
            }
        }
    }
    for r in 1..=degree {
        for j in 0..knots.len() - r - 1 {
            let mut v = F::zero();
            let denom_left = knots[j + r] - knots[j];
            if denom_left > F::zero() {
                v += (t - knots[j]) / denom_left * b[j];
            }
            let denom_right = knots[j + r + 1] - knots[j + 1];
            if denom_right > F::zero() {
                v += (knots[j + r + 1] - t) / denom_right * b[j + 1];
            }
            b[j] = v;
        }
    }
    b.truncate(k);
    b
}

/// T x K design matrix of degree-`degree` B-spline basis functions over the
/// timepoints, clamped at both ends.
pub fn bspline_design<F: Float>(times: &[F], k: usize, degree: usize) -> Result<Array2<F>> {
    let knots = quantile_knots(times, k, degree)?;
    let mut design = Array2::<F>::zeros((times.len(), k));
    for (ti, &t) in times.iter().enumerate() {
        let row = basis_row(&knots, k, degree, t);
        for (j, v) in row.into_iter().enumerate() {
            design[(ti, j)] = v;
        }
    }
    Ok(design)
}
