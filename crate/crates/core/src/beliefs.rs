//! Decisions over rating posteriors: pointwise and anytime dominance,
//! practical-equivalence probabilities, the latched resolution matrix, and
//! elimination checks.
//!
//! Draws where two ratings collide exactly count as dominating for neither
//! direction (possible with Laplace draws at float precision).

use crate::error::{Error, Result};
use crate::float::Float;
use crate::inference::RatingSamples;

/// Fraction of posterior draws with theta_i(t) > theta_j(t).
pub fn p_dominates_pointwise<F: Float>(
    samples: &RatingSamples<F>,
    i: usize,
    j: usize,
    t: usize,
) -> F {
    let s = samples.draws();
    let mut count = 0usize;
    for d in 0..s {
        if samples.theta(d, t, i) > samples.theta(d, t, j) {
            count += 1;
        }
    }
    F::from_usize_(count) / F::from_usize_(s)
}

/// Fraction of draws with theta_i(t) > theta_j(t) at every timepoint
/// simultaneously. On product-of-marginals draws this is a product-rule
/// joint, which the sample structure labels explicitly.
pub fn p_dominates_anytime<F: Float>(samples: &RatingSamples<F>, i: usize, j: usize) -> F {
    let s = samples.draws();
    let t = samples.timepoints();
    let mut count = 0usize;
    'draws: for d in 0..s {
        for ti in 0..t {
            if !(samples.theta(d, ti, i) > samples.theta(d, ti, j)) {
                continue 'draws;
            }
        }
        count += 1;
    }
    F::from_usize_(count) / F::from_usize_(s)
}

/// Fraction of draws whose pairwise win probability lies inside the region
/// of practical equivalence [0.5 - eps, 0.5 + eps].
pub fn p_equivalent<F: Float>(
    samples: &RatingSamples<F>,
    i: usize,
    j: usize,
    t: usize,
    epsilon: F,
) -> Result<F> {
    if !(epsilon >= F::zero() && epsilon < F::cast(0.5)) {
        return Err(Error::invalid("epsilon must lie in [0, 0.5)"));
    }
    let half = F::cast(0.5);
    let s = samples.draws();
    let mut count = 0usize;
    for d in 0..s {
        let a = samples.theta(d, t, i);
        let b = samples.theta(d, t, j);
        let win = a / (a + b);
        if (win - half).abs() <= epsilon {
            count += 1;
        }
    }
    Ok(F::from_usize_(count) / F::from_usize_(s))
}

/// Confidently decided relation of a pair at one timepoint. Labels are
/// oriented on the canonical pair (i < j).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// Lower-index algorithm dominates at this timepoint.
    DominatesIj,
    /// Higher-index algorithm dominates at this timepoint.
    DominatesJi,
    Equivalent,
    /// Latched early because crossing evidence resolved the whole pair.
    CrossingShortcut,
    /// Latched because one of the pair was eliminated.
    EliminatedShortcut,
}

/// Latched boolean state over (timepoint x algorithm pair): which relations
/// are confidently decided. Entries never revert within a race.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ResolutionMatrix {
    n: usize,
    timepoints: usize,
    /// Upper-triangle pairs in canonical order, each with one label slot
    /// per timepoint.
    cells: Vec<Vec<Option<Relation>>>,
}

fn pair_count(n: usize) -> usize {
    n * (n - 1) / 2
}

impl ResolutionMatrix {
    pub fn new(n: usize, timepoints: usize) -> Self {
        Self {
            n,
            timepoints,
            cells: vec![vec![None; timepoints]; pair_count(n)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn timepoints(&self) -> usize {
        self.timepoints
    }

    fn pair_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.n);
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    /// Canonicalize an index pair and remember whether it was flipped.
    fn canonical(i: usize, j: usize) -> (usize, usize, bool) {
        if i < j {
            (i, j, false)
        } else {
            (j, i, true)
        }
    }

    pub fn label(&self, i: usize, j: usize, t: usize) -> Option<Relation> {
        let (a, b, flipped) = Self::canonical(i, j);
        let raw = self.cells[self.pair_index(a, b)][t];
        raw.map(|r| match (r, flipped) {
            (Relation::DominatesIj, true) => Relation::DominatesJi,
            (Relation::DominatesJi, true) => Relation::DominatesIj,
            (other, _) => other,
        })
    }

    pub fn is_resolved(&self, i: usize, j: usize, t: usize) -> bool {
        self.label(i, j, t).is_some()
    }

    /// Latch a relation; an already-resolved entry is left untouched.
    /// Returns whether the entry was newly set.
    pub fn resolve(&mut self, i: usize, j: usize, t: usize, relation: Relation) -> bool {
        let (a, b, flipped) = Self::canonical(i, j);
        let rel = match (relation, flipped) {
            (Relation::DominatesIj, true) => Relation::DominatesJi,
            (Relation::DominatesJi, true) => Relation::DominatesIj,
            (other, _) => other,
        };
        let idx = self.pair_index(a, b);
        let slot = &mut self.cells[idx][t];
        if slot.is_none() {
            *slot = Some(rel);
            true
        } else {
            false
        }
    }

    pub fn pair_fully_resolved(&self, i: usize, j: usize) -> bool {
        (0..self.timepoints).all(|t| self.is_resolved(i, j, t))
    }

    /// Latch every entry of every pair involving `algo`.
    pub fn mark_eliminated(&mut self, algo: usize) {
        for other in 0..self.n {
            if other == algo {
                continue;
            }
            for t in 0..self.timepoints {
                self.resolve(algo, other, t, Relation::EliminatedShortcut);
            }
        }
    }

    /// Grow the matrix by one algorithm; all pairs involving the newcomer
    /// start unresolved, existing entries are preserved.
    pub fn add_algorithm(&mut self) {
        let old_n = self.n;
        let new_n = old_n + 1;
        let mut cells = vec![vec![None; self.timepoints]; pair_count(new_n)];
        for i in 0..old_n {
            for j in i + 1..old_n {
                let old_idx = i * (2 * old_n - i - 1) / 2 + (j - i - 1);
                let new_idx = i * (2 * new_n - i - 1) / 2 + (j - i - 1);
                cells[new_idx] = std::mem::take(&mut self.cells[old_idx]);
            }
        }
        self.n = new_n;
        self.cells = cells;
    }

    /// Unresolved (i, j, timepoint) entries among the given candidate set.
    pub fn unresolved_entries(&self, candidates: &[usize]) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (ai, &i) in candidates.iter().enumerate() {
            for &j in &candidates[ai + 1..] {
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                for t in 0..self.timepoints {
                    if !self.is_resolved(a, b, t) {
                        out.push((a, b, t));
                    }
                }
            }
        }
        out
    }

    /// Pairs among candidates that are not yet resolved at every timepoint.
    pub fn open_pairs(&self, candidates: &[usize]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (ai, &i) in candidates.iter().enumerate() {
            for &j in &candidates[ai + 1..] {
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                if !self.pair_fully_resolved(a, b) {
                    out.push((a, b));
                }
            }
        }
        out
    }
}

/// Pair resolution style.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionMode {
    /// Every timepoint must be individually decided.
    Strict,
    /// Pairs with confirmed crossing trajectories resolve at all
    /// timepoints at once.
    Crossing,
}

/// Elimination style.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EliminationMode {
    /// Dominated at each timepoint marginally.
    Pointwise,
    /// Dominated at all timepoints simultaneously (joint posterior event).
    Joint,
}

/// Outcome of one resolution sweep.
#[derive(Debug, Clone, Default)]
pub struct ResolutionUpdate {
    /// Entries latched in this sweep.
    pub newly_resolved: Vec<(usize, usize, usize, Relation)>,
    /// Latched relations whose current posterior support dropped well below
    /// the decision threshold (alpha - 0.05).
    pub warnings: Vec<String>,
}

/// Sweep all unresolved entries among `candidates`, latching every relation
/// that clears the alpha threshold; dominance takes precedence over
/// equivalence. In crossing mode, pairs with confirmed two-sided evidence
/// (at least one side a strict dominance) resolve at every timepoint.
pub fn update_resolution<F: Float>(
    matrix: &mut ResolutionMatrix,
    samples: &RatingSamples<F>,
    candidates: &[usize],
    alpha: F,
    epsilon: F,
    mode: ResolutionMode,
) -> Result<ResolutionUpdate> {
    if !(alpha > F::cast(0.5) && alpha <= F::one()) {
        return Err(Error::invalid("alpha must lie in (0.5, 1]"));
    }
    let mut update = ResolutionUpdate::default();

    for (ai, &i) in candidates.iter().enumerate() {
        for &j in &candidates[ai + 1..] {
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            for t in 0..matrix.timepoints() {
                if matrix.is_resolved(a, b, t) {
                    continue;
                }
                let p_ab = p_dominates_pointwise(samples, a, b, t);
                let p_ba = p_dominates_pointwise(samples, b, a, t);
                let relation = if p_ab >= alpha {
                    Some(Relation::DominatesIj)
                } else if p_ba >= alpha {
                    Some(Relation::DominatesJi)
                } else if p_equivalent(samples, a, b, t, epsilon)? >= alpha {
                    Some(Relation::Equivalent)
                } else {
                    None
                };
                if let Some(rel) = relation {
                    matrix.resolve(a, b, t, rel);
                    update.newly_resolved.push((a, b, t, rel));
                }
            }

            if mode == ResolutionMode::Crossing && !matrix.pair_fully_resolved(a, b) {
                let mut favors_a = false;
                let mut favors_b = false;
                let mut strict = false;
                for t in 0..matrix.timepoints() {
                    match matrix.label(a, b, t) {
                        Some(Relation::DominatesIj) => {
                            favors_a = true;
                            strict = true;
                        }
                        Some(Relation::DominatesJi) => {
                            favors_b = true;
                            strict = true;
                        }
                        Some(Relation::Equivalent) => {
                            favors_a = true;
                            favors_b = true;
                        }
                        _ => {}
                    }
                }
                if favors_a && favors_b && strict {
                    for t in 0..matrix.timepoints() {
                        if matrix.resolve(a, b, t, Relation::CrossingShortcut) {
                            update
                                .newly_resolved
                                .push((a, b, t, Relation::CrossingShortcut));
                        }
                    }
                }
            }

            // Audit latched relations against the current posterior; a big
            // drop is reported, never unlatched.
            let audit_floor = alpha - F::cast(0.05);
            for t in 0..matrix.timepoints() {
                let current = match matrix.label(a, b, t) {
                    Some(Relation::DominatesIj) => p_dominates_pointwise(samples, a, b, t),
                    Some(Relation::DominatesJi) => p_dominates_pointwise(samples, b, a, t),
                    Some(Relation::Equivalent) => p_equivalent(samples, a, b, t, epsilon)?,
                    _ => continue,
                };
                if current < audit_floor
                    && !update
                        .newly_resolved
                        .iter()
                        .any(|&(x, y, tt, _)| x == a && y == b && tt == t)
                {
                    update.warnings.push(format!(
                        "latched relation for pair ({a},{b}) at t[{t}] now has support {:.3}",
                        current.to64()
                    ));
                }
            }
        }
    }
    Ok(update)
}

/// Algorithms dominated by some member of the candidate set at entry, with
/// their dominators. All checks run against the candidate set as passed in
/// (simultaneous semantics); the caller applies the removals afterwards.
pub fn check_elimination<F: Float>(
    candidates: &[usize],
    samples: &RatingSamples<F>,
    alpha: F,
    mode: EliminationMode,
) -> Result<Vec<(usize, usize)>> {
    if candidates.len() < 2 {
        return Err(Error::invalid("need at least 2 candidates"));
    }
    if !(alpha > F::cast(0.5) && alpha <= F::one()) {
        return Err(Error::invalid("alpha must lie in (0.5, 1]"));
    }
    let t = samples.timepoints();
    let mut out = Vec::new();
    for &victim in candidates {
        let dominator = candidates.iter().copied().find(|&b| {
            if b == victim {
                return false;
            }
            match mode {
                EliminationMode::Pointwise => {
                    (0..t).all(|ti| p_dominates_pointwise(samples, b, victim, ti) >= alpha)
                }
                EliminationMode::Joint => p_dominates_anytime(samples, b, victim) >= alpha,
            }
        });
        if let Some(b) = dominator {
            out.push((victim, b));
        }
    }
    Ok(out)
}
