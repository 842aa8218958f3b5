//! Deployment-time selection: push rating draws through a time preference,
//! then rank algorithms (or portfolios) under a risk criterion.

use crate::error::{Error, Result};
use crate::float::Float;
use crate::grid::TimeGrid;
use crate::inference::RatingSamples;
use crate::plmodel::portfolio_rating;
use crate::stats::{quantile, trapezoid_weights};
use ndarray::Array2;
use std::sync::Arc;

/// Strictly monotone aggregation of a rating trajectory into a scalar.
#[derive(Clone)]
pub enum PreferenceFunctional<F> {
    /// Nonnegative weights per grid point (quadrature factors already
    /// applied); at least one weight must be positive.
    Linear { name: String, weights: Vec<F> },
    /// min over t of (theta(t) - reference(t)); the constructive witness
    /// that any non-dominated algorithm is optimal under some preference.
    MinGap { reference: Vec<F> },
    /// Arbitrary user-supplied monotone functional.
    Custom {
        name: String,
        f: Arc<dyn Fn(&[F]) -> F + Send + Sync>,
    },
}

impl<F: Float> std::fmt::Debug for PreferenceFunctional<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PreferenceFunctional({})", self.name())
    }
}

impl<F: Float> PreferenceFunctional<F> {
    fn linear(name: &str, weights: Vec<F>) -> Result<Self> {
        if weights.iter().any(|w| *w < F::zero()) {
            return Err(Error::invalid("preference weights must be nonnegative"));
        }
        if !(weights.iter().cloned().sum::<F>() > F::zero()) {
            return Err(Error::invalid("preference weights must not all vanish"));
        }
        Ok(Self::Linear {
            name: name.to_string(),
            weights,
        })
    }

    /// Uniform budget weight: trapezoidal integral of theta over the grid.
    pub fn uniform(grid: &TimeGrid<F>) -> Self {
        Self::linear("uniform", trapezoid_weights(grid.points())).expect("positive weights")
    }

    /// w(t) = 1/t, emphasizing early budgets; grid points must be positive.
    pub fn log_uniform(grid: &TimeGrid<F>) -> Result<Self> {
        if grid.first() <= F::zero() {
            return Err(Error::invalid("log-uniform preference needs positive timepoints"));
        }
        let weights = trapezoid_weights(grid.points())
            .into_iter()
            .zip(grid.points())
            .map(|(w, &t)| w / t)
            .collect();
        Self::linear("log_uniform", weights)
    }

    /// Only the final timepoint matters.
    pub fn final_time(timepoints: usize) -> Self {
        let mut weights = vec![F::zero(); timepoints];
        weights[timepoints - 1] = F::one();
        Self::Linear {
            name: "final".to_string(),
            weights,
        }
    }

    /// Point mass on the grid point nearest to `t`.
    pub fn point(grid: &TimeGrid<F>, t: F) -> Self {
        let mut best = 0usize;
        let mut dist = F::infinity();
        for (i, &p) in grid.points().iter().enumerate() {
            if (p - t).abs() < dist {
                dist = (p - t).abs();
                best = i;
            }
        }
        let mut weights = vec![F::zero(); grid.len()];
        weights[best] = F::one();
        Self::Linear {
            name: format!("point:{}", grid.points()[best]),
            weights,
        }
    }

    /// Expectation over a budget distribution: probability mass is assigned
    /// to the nearest grid point each.
    pub fn budget_distribution(grid: &TimeGrid<F>, masses: &[(F, F)]) -> Result<Self> {
        let mut weights = vec![F::zero(); grid.len()];
        for &(t, mass) in masses {
            if mass < F::zero() {
                return Err(Error::invalid("budget distribution mass must be nonnegative"));
            }
            let mut best = 0usize;
            let mut dist = F::infinity();
            for (i, &p) in grid.points().iter().enumerate() {
                if (p - t).abs() < dist {
                    dist = (p - t).abs();
                    best = i;
                }
            }
            weights[best] += mass;
        }
        Self::linear("budget_distribution", weights)
    }

    /// Weight function tabulated as (t, w) pairs, one per grid point,
    /// combined with trapezoidal quadrature.
    pub fn tabulated(grid: &TimeGrid<F>, weights_at_points: &[F]) -> Result<Self> {
        if weights_at_points.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: weights_at_points.len(),
            });
        }
        let weights = trapezoid_weights(grid.points())
            .into_iter()
            .zip(weights_at_points)
            .map(|(q, &w)| q * w)
            .collect();
        Self::linear("tabulated", weights)
    }

    pub fn custom(
        name: &str,
        f: impl Fn(&[F]) -> F + Send + Sync + 'static,
    ) -> Self {
        Self::Custom {
            name: name.to_string(),
            f: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Self::Linear { name, .. } => name,
            Self::MinGap { .. } => "minimax_gap",
            Self::Custom { name, .. } => name,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Self::Linear { .. })
    }

    /// Apply the functional to one rating trajectory.
    pub fn value(&self, ratings: &[F]) -> F {
        match self {
            Self::Linear { weights, .. } => ratings
                .iter()
                .zip(weights)
                .map(|(&r, &w)| r * w)
                .sum(),
            Self::MinGap { reference } => ratings
                .iter()
                .zip(reference)
                .map(|(&r, &x)| r - x)
                .fold(F::infinity(), F::min),
            Self::Custom { f, .. } => f(ratings),
        }
    }
}

/// The minimax witness preference for a reference trajectory: u(theta) =
/// min_t (theta(t) - reference(t)). Used to certify Pareto membership, not
/// for deployment.
pub fn minimax_preference<F: Float>(reference: Vec<F>) -> PreferenceFunctional<F> {
    PreferenceFunctional::MinGap { reference }
}

/// Per-algorithm value draws under one preference.
#[derive(Debug, Clone)]
pub struct ValuePosterior<F> {
    /// draws x algorithms.
    values: Array2<F>,
    /// Column -> algorithm index in the originating sample tensor.
    algorithms: Vec<usize>,
}

impl<F: Float> ValuePosterior<F> {
    pub fn draws(&self) -> usize {
        self.values.nrows()
    }

    pub fn algorithms(&self) -> &[usize] {
        &self.algorithms
    }

    pub fn column_of(&self, algo: usize) -> Option<usize> {
        self.algorithms.iter().position(|&a| a == algo)
    }

    pub fn value(&self, draw: usize, column: usize) -> F {
        self.values[(draw, column)]
    }
}

/// Propagate rating draws through the preference for each algorithm.
pub fn value_posterior<F: Float>(
    samples: &RatingSamples<F>,
    preference: &PreferenceFunctional<F>,
    algorithms: &[usize],
) -> Result<ValuePosterior<F>> {
    if algorithms.is_empty() {
        return Err(Error::invalid("no algorithms to evaluate"));
    }
    for &a in algorithms {
        if a >= samples.n() {
            return Err(Error::UnknownAlgorithm(a));
        }
    }
    let s = samples.draws();
    let t = samples.timepoints();
    let mut values = Array2::<F>::zeros((s, algorithms.len()));
    let mut row = vec![F::zero(); t];
    for d in 0..s {
        for (c, &a) in algorithms.iter().enumerate() {
            for ti in 0..t {
                row[ti] = samples.theta(d, ti, a);
            }
            values[(d, c)] = preference.value(&row);
        }
    }
    Ok(ValuePosterior {
        values,
        algorithms: algorithms.to_vec(),
    })
}

/// Risk profile over the value posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criterion<F> {
    /// Probability of being best: per-draw argmax frequency, ties split.
    P2bb,
    /// Posterior mean value.
    Expected,
    /// Empirical gamma-quantile of the value draws.
    Quantile(F),
}

impl<F: Float> Criterion<F> {
    fn validate(&self) -> Result<()> {
        if let Criterion::Quantile(g) = self {
            if !(*g > F::zero() && *g < F::one()) {
                return Err(Error::invalid("quantile level must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

/// Score every algorithm under the criterion; higher is better.
fn scores<F: Float>(values: &ValuePosterior<F>, criterion: Criterion<F>) -> Result<Vec<F>> {
    criterion.validate()?;
    let s = values.draws();
    if s == 0 {
        return Err(Error::invalid("empty value posterior"));
    }
    let cols = values.algorithms.len();
    Ok(match criterion {
        Criterion::P2bb => {
            let mut credit = vec![F::zero(); cols];
            for d in 0..s {
                let mut best = F::neg_infinity();
                for c in 0..cols {
                    best = best.max(values.value(d, c));
                }
                let winners: Vec<usize> =
                    (0..cols).filter(|&c| values.value(d, c) == best).collect();
                let share = F::one() / F::from_usize_(winners.len());
                for c in winners {
                    credit[c] += share;
                }
            }
            credit.into_iter().map(|c| c / F::from_usize_(s)).collect()
        }
        Criterion::Expected => (0..cols)
            .map(|c| {
                (0..s).map(|d| values.value(d, c)).sum::<F>() / F::from_usize_(s)
            })
            .collect(),
        Criterion::Quantile(g) => (0..cols)
            .map(|c| {
                let mut xs: Vec<F> = (0..s).map(|d| values.value(d, c)).collect();
                xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                quantile(&xs, g)
            })
            .collect(),
    })
}

/// Rank the algorithms by criterion score, best first. Ties break toward
/// the lower algorithm index for determinism.
pub fn select<F: Float>(
    values: &ValuePosterior<F>,
    criterion: Criterion<F>,
) -> Result<Vec<(usize, F)>> {
    let s = scores(values, criterion)?;
    let mut ranked: Vec<(usize, F)> = values
        .algorithms
        .iter()
        .copied()
        .zip(s)
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Expected shortfall of picking `algo` instead of the per-draw best.
pub fn regret<F: Float>(values: &ValuePosterior<F>, algo: usize) -> Result<F> {
    let col = values
        .column_of(algo)
        .ok_or(Error::UnknownAlgorithm(algo))?;
    let s = values.draws();
    if s == 0 {
        return Err(Error::invalid("empty value posterior"));
    }
    let cols = values.algorithms.len();
    let mut total = F::zero();
    for d in 0..s {
        let mut best = F::neg_infinity();
        for c in 0..cols {
            best = best.max(values.value(d, c));
        }
        total += best - values.value(d, col);
    }
    Ok(total / F::from_usize_(s))
}

/// Multiset search strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortfolioStrategy {
    /// Enumerate when feasible, otherwise fall back to greedy.
    Auto,
    Exhaustive,
    Greedy,
}

#[derive(Debug, Clone)]
pub struct PortfolioResult<F> {
    /// Sorted multiset of algorithm indices.
    pub members: Vec<usize>,
    pub score: F,
    pub strategy_used: &'static str,
    /// Linear preference + mean-like criterion: the optimum is the best
    /// single algorithm repeated k times.
    pub linear_shortcut: bool,
    /// When the shortcut applies and an exhaustive pass also ran, whether
    /// the shortcut answer attains the exhaustive optimum.
    pub shortcut_agrees: Option<bool>,
}

const EXHAUSTIVE_LIMIT: u128 = 100_000;

fn multiset_count(n: usize, k: usize) -> u128 {
    // C(n + k - 1, k)
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    for i in 0..k {
        num = num.saturating_mul((n + k - 1 - i) as u128);
        den = den.saturating_mul((i + 1) as u128);
    }
    num / den
}

fn portfolio_values<F: Float>(
    samples: &RatingSamples<F>,
    preference: &PreferenceFunctional<F>,
    members: &[usize],
) -> Result<Vec<F>> {
    let s = samples.draws();
    let t = samples.timepoints();
    let mut row = vec![F::zero(); t];
    let mut theta_t = vec![F::zero(); samples.n()];
    let mut out = Vec::with_capacity(s);
    for d in 0..s {
        for ti in 0..t {
            for i in 0..samples.n() {
                theta_t[i] = samples.theta(d, ti, i);
            }
            row[ti] = portfolio_rating(&theta_t, members)?;
        }
        out.push(preference.value(&row));
    }
    Ok(out)
}

fn criterion_score<F: Float>(values: &[F], criterion: Criterion<F>) -> F {
    match criterion {
        Criterion::Expected | Criterion::P2bb => {
            // P2bb needs all candidates jointly; scored per-multiset it
            // degenerates to the mean, so both use the expectation here and
            // P2bb is resolved jointly in the exhaustive path.
            values.iter().cloned().sum::<F>() / F::from_usize_(values.len())
        }
        Criterion::Quantile(g) => {
            let mut xs = values.to_vec();
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            quantile(&xs, g)
        }
    }
}

fn enumerate_multisets(candidates: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn rec(candidates: &[usize], k: usize, start: usize, acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if acc.len() == k {
            out.push(acc.clone());
            return;
        }
        for i in start..candidates.len() {
            acc.push(candidates[i]);
            rec(candidates, k, i, acc, out);
            acc.pop();
        }
    }
    let mut out = Vec::new();
    rec(candidates, k, 0, &mut Vec::new(), &mut out);
    out
}

/// Best size-k multiset of `candidates` under the preference and criterion.
pub fn portfolio_search<F: Float>(
    samples: &RatingSamples<F>,
    preference: &PreferenceFunctional<F>,
    candidates: &[usize],
    k: usize,
    criterion: Criterion<F>,
    strategy: PortfolioStrategy,
) -> Result<PortfolioResult<F>> {
    if k == 0 {
        return Err(Error::invalid("portfolio needs at least one slot"));
    }
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates"));
    }
    criterion.validate()?;

    let linear_shortcut = preference.is_linear()
        && matches!(criterion, Criterion::Expected | Criterion::P2bb);

    let count = multiset_count(candidates.len(), k);
    let exhaustive = match strategy {
        PortfolioStrategy::Exhaustive => true,
        PortfolioStrategy::Greedy => false,
        PortfolioStrategy::Auto => count <= EXHAUSTIVE_LIMIT,
    };

    let evaluate = |members: &[usize]| -> Result<F> {
        let vals = portfolio_values(samples, preference, members)?;
        Ok(criterion_score(&vals, criterion))
    };

    let (members, score, used) = if exhaustive {
        if matches!(strategy, PortfolioStrategy::Auto | PortfolioStrategy::Exhaustive)
            && count > EXHAUSTIVE_LIMIT
            && strategy == PortfolioStrategy::Auto
        {
            unreachable!()
        }
        let mut best: Option<(Vec<usize>, F)> = None;
        if criterion == Criterion::P2bb {
            // Joint per-draw argmax over all multisets, ties split.
            let multisets = enumerate_multisets(candidates, k);
            let all_values: Vec<Vec<F>> = multisets
                .iter()
                .map(|m| portfolio_values(samples, preference, m))
                .collect::<Result<_>>()?;
            let s = samples.draws();
            let mut credit = vec![F::zero(); multisets.len()];
            for d in 0..s {
                let mut top = F::neg_infinity();
                for v in &all_values {
                    top = top.max(v[d]);
                }
                let winners: Vec<usize> = (0..multisets.len())
                    .filter(|&m| all_values[m][d] == top)
                    .collect();
                let share = F::one() / F::from_usize_(winners.len());
                for w in winners {
                    credit[w] += share;
                }
            }
            for (m, c) in multisets.into_iter().zip(credit) {
                let score = c / F::from_usize_(s);
                if best.as_ref().map(|(_, b)| score > *b).unwrap_or(true) {
                    best = Some((m, score));
                }
            }
        } else {
            for m in enumerate_multisets(candidates, k) {
                let score = evaluate(&m)?;
                if best.as_ref().map(|(_, b)| score > *b).unwrap_or(true) {
                    best = Some((m, score));
                }
            }
        }
        let (m, s) = best.unwrap();
        (m, s, "exhaustive")
    } else {
        let mut members: Vec<usize> = Vec::with_capacity(k);
        let mut score = F::neg_infinity();
        for _ in 0..k {
            let mut best_next: Option<(usize, F)> = None;
            for &c in candidates {
                members.push(c);
                let s = evaluate(&members)?;
                members.pop();
                if best_next.map(|(_, b)| s > b).unwrap_or(true) {
                    best_next = Some((c, s));
                }
            }
            let (c, s) = best_next.unwrap();
            members.push(c);
            score = s;
        }
        members.sort_unstable();
        (members, score, "greedy")
    };

    let shortcut_agrees = if linear_shortcut && used == "exhaustive" {
        // The individually best algorithm repeated k times must attain the
        // exhaustive optimum.
        let singles = value_posterior(samples, preference, candidates)?;
        let ranked = select(&singles, criterion)?;
        let repeated = vec![ranked[0].0; k];
        let repeated_vals = portfolio_values(samples, preference, &repeated)?;
        let repeated_score = criterion_score(&repeated_vals, criterion);
        Some(repeated_score >= score - F::cast(1e-9) * score.abs().max(F::one()))
    } else {
        None
    };

    Ok(PortfolioResult {
        members,
        score,
        strategy_used: used,
        linear_shortcut,
        shortcut_agrees,
    })
}
