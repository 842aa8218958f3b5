//! Time-indexed ranking observations extracted from trajectory sets.
//!
//! At each grid timepoint the algorithms that are still within their run
//! horizon are ordered by best-so-far value (best first). Algorithms without
//! a value yet rank below every algorithm that has one, mutually tied.
//! Exact-value ties are expanded into weighted permutations; large tie
//! groups are subsampled instead, which adds variance but no bias.

use crate::error::{Error, Result};
use crate::float::Float;
use crate::grid::TimeGrid;
use crate::trajectory::{Trajectory, ValueAt};
use rand::seq::SliceRandom;
use rand::Rng;

/// How exact ties are detected and expanded.
#[derive(Debug, Clone)]
pub struct TiePolicy<F> {
    /// Absolute tolerance for tie detection. Zero (the default) means exact
    /// value equality; anything else injects a scale assumption and is
    /// opt-in only.
    pub tolerance: F,
    /// Enumerate all tie permutations while their count stays at or below
    /// this bound.
    pub max_expand: usize,
    /// Number of uniform permutation draws when enumeration is too large.
    pub subsample: usize,
}

impl<F: Float> Default for TiePolicy<F> {
    fn default() -> Self {
        Self {
            tolerance: F::zero(),
            max_expand: 24,
            subsample: 24,
        }
    }
}

/// One (possibly weighted, possibly truncated) ordering of algorithm columns
/// at a grid timepoint.
///
/// `ordering` lists ranked columns best first. `pool` lists columns that were
/// present in the comparison but whose order below the ranked prefix was not
/// observed (top-m partial ranking); it is empty for full rankings.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingObservation<F> {
    pub timepoint: usize,
    pub ordering: Vec<usize>,
    pub pool: Vec<usize>,
    pub weight: F,
}

impl<F: Float> RankingObservation<F> {
    pub fn full(timepoint: usize, ordering: Vec<usize>, weight: F) -> Self {
        Self {
            timepoint,
            ordering,
            pool: Vec::new(),
            weight,
        }
    }

    /// All columns taking part in the comparison.
    pub fn present(&self) -> impl Iterator<Item = usize> + '_ {
        self.ordering.iter().chain(self.pool.iter()).copied()
    }
}

/// Timepoints that produced no observation and why.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RankingDiagnostics {
    /// (timepoint index, number of rankable algorithms found there).
    pub skipped: Vec<(usize, usize)>,
}

fn factorial_capped(k: usize, cap: u128) -> u128 {
    let mut f: u128 = 1;
    for i in 2..=k as u128 {
        f = f.saturating_mul(i);
        if f > cap {
            return f;
        }
    }
    f
}

fn all_permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &head) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut tail in all_permutations(&rest) {
            let mut perm = Vec::with_capacity(items.len());
            perm.push(head);
            perm.append(&mut tail);
            out.push(perm);
        }
    }
    out
}

/// Expand an ordering-with-tie-groups into weighted flat orderings.
///
/// Each element of `groups` is a set of mutually tied columns; groups are
/// ordered best first. When the total number of tie permutations is at most
/// `max_expand` they are enumerated exactly, each weighted by the product of
/// 1/k! over the groups. Otherwise `subsample` permutations are drawn
/// uniformly with replacement, each weighted 1/subsample.
pub fn expand_ties<F: Float, R: Rng + ?Sized>(
    groups: &[Vec<usize>],
    max_expand: usize,
    subsample: usize,
    rng: &mut R,
) -> Result<Vec<(Vec<usize>, F)>> {
    if max_expand < 1 || subsample < 1 {
        return Err(Error::invalid("max_expand and subsample must be >= 1"));
    }
    let cap = max_expand as u128;
    let mut total: u128 = 1;
    for g in groups {
        total = total.saturating_mul(factorial_capped(g.len(), cap));
        if total > cap {
            break;
        }
    }

    if total <= cap {
        // Exact enumeration: cartesian product of per-group permutations.
        let weight = F::one() / F::cast(total as f64);
        let mut orderings: Vec<Vec<usize>> = vec![Vec::new()];
        for g in groups {
            let perms = all_permutations(g);
            let mut next = Vec::with_capacity(orderings.len() * perms.len());
            for prefix in &orderings {
                for perm in &perms {
                    let mut o = prefix.clone();
                    o.extend_from_slice(perm);
                    next.push(o);
                }
            }
            orderings = next;
        }
        return Ok(orderings.into_iter().map(|o| (o, weight)).collect());
    }

    let weight = F::one() / F::from_usize_(subsample);
    let mut out = Vec::with_capacity(subsample);
    for _ in 0..subsample {
        let mut o = Vec::new();
        for g in groups {
            let mut g = g.clone();
            g.shuffle(rng);
            o.extend_from_slice(&g);
        }
        out.push((o, weight));
    }
    Ok(out)
}

/// Group the algorithms present at one timepoint into ordered tie groups:
/// valued algorithms sorted ascending (minimization), then the "no value
/// yet" block as one final tied group.
fn tie_groups<F: Float>(present: &[(usize, ValueAt<F>)], tolerance: F) -> Vec<Vec<usize>> {
    let mut valued: Vec<(usize, F)> = Vec::new();
    let mut none_yet: Vec<usize> = Vec::new();
    for &(col, v) in present {
        match v {
            ValueAt::Value(x) => valued.push((col, x)),
            ValueAt::NoneYet => none_yet.push(col),
        }
    }
    valued.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    none_yet.sort_unstable();

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut anchor: Option<F> = None;
    for (col, v) in valued {
        match anchor {
            Some(a) if (v - a).abs() <= tolerance => groups.last_mut().unwrap().push(col),
            _ => {
                groups.push(vec![col]);
                anchor = Some(v);
            }
        }
    }
    if !none_yet.is_empty() {
        groups.push(none_yet);
    }
    groups
}

/// Build the weighted observations for one timepoint from the algorithms
/// present there. Returns an empty vector when fewer than two algorithms are
/// rankable.
pub fn observations_at<F: Float, R: Rng + ?Sized>(
    present: &[(usize, ValueAt<F>)],
    timepoint: usize,
    policy: &TiePolicy<F>,
    rng: &mut R,
) -> Result<Vec<RankingObservation<F>>> {
    if present.len() < 2 {
        return Ok(Vec::new());
    }
    let groups = tie_groups(present, policy.tolerance);
    let expanded = expand_ties(&groups, policy.max_expand, policy.subsample, rng)?;
    Ok(expanded
        .into_iter()
        .map(|(ordering, weight)| RankingObservation::full(timepoint, ordering, weight))
        .collect())
}

/// Convert a set of trajectories sharing one instance into ranking
/// observations over the grid.
///
/// `ids` maps algorithm identifiers to observation columns (position in the
/// slice). Algorithms whose horizon ends before a timepoint are omitted from
/// that timepoint's ranking; timepoints with fewer than two rankable
/// algorithms are skipped and reported in the diagnostics.
pub fn rankings_from_trajectories<F: Float, R: Rng + ?Sized>(
    trajs: &[Trajectory<F>],
    ids: &[String],
    grid: &TimeGrid<F>,
    policy: &TiePolicy<F>,
    rng: &mut R,
) -> Result<(Vec<RankingObservation<F>>, RankingDiagnostics)> {
    if let Some(first) = trajs.first() {
        if let Some(other) = trajs.iter().find(|t| t.instance_id != first.instance_id) {
            return Err(Error::invalid(format!(
                "trajectories mix instances {:?} and {:?}",
                first.instance_id, other.instance_id
            )));
        }
    }
    let column = |id: &str| -> Result<usize> {
        ids.iter()
            .position(|x| x == id)
            .ok_or_else(|| Error::invalid(format!("algorithm id {id:?} not in column set")))
    };

    let mut observations = Vec::new();
    let mut diag = RankingDiagnostics::default();
    for (ti, &t) in grid.points().iter().enumerate() {
        let mut present = Vec::with_capacity(trajs.len());
        for traj in trajs {
            match traj.evaluate_at(t) {
                Ok(v) => present.push((column(&traj.algorithm_id)?, v)),
                Err(Error::BudgetExceeded { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        if present.len() < 2 {
            diag.skipped.push((ti, present.len()));
            continue;
        }
        present.sort_by_key(|&(col, _)| col);
        observations.extend(observations_at(&present, ti, policy, rng)?);
    }
    Ok((observations, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Spacing;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn simple_ordering_no_ties() {
        let present = [
            (0usize, ValueAt::Value(1.0f64)),
            (1, ValueAt::Value(2.0)),
            (2, ValueAt::Value(3.0)),
        ];
        let obs = observations_at(&present, 0, &TiePolicy::default(), &mut rng()).unwrap();
        assert_eq!(obs.len(), 1);
        assert_eq!(obs[0].ordering, vec![0, 1, 2]);
        assert_eq!(obs[0].weight, 1.0);
    }

    #[test]
    fn two_way_tie_expands_to_half_weights() {
        let present = [(0usize, ValueAt::Value(1.0f64)), (1, ValueAt::Value(1.0))];
        let obs = observations_at(&present, 0, &TiePolicy::default(), &mut rng()).unwrap();
        assert_eq!(obs.len(), 2);
        assert!(obs.iter().all(|o| o.weight == 0.5));
        let mut orders: Vec<_> = obs.iter().map(|o| o.ordering.clone()).collect();
        orders.sort();
        assert_eq!(orders, vec![vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn none_yet_ranks_last_and_tied() {
        let present = [
            (0usize, ValueAt::NoneYet),
            (1, ValueAt::Value(2.0f64)),
            (2, ValueAt::NoneYet),
            (3, ValueAt::Value(1.0)),
        ];
        let obs = observations_at(&present, 0, &TiePolicy::default(), &mut rng()).unwrap();
        assert_eq!(obs.len(), 2); // 2-way tie among the no-value pair
        for o in &obs {
            assert_eq!(&o.ordering[..2], &[3, 1]);
            assert_eq!(o.weight, 0.5);
        }
    }

    #[test]
    fn oversized_tie_subsamples() {
        // 5! = 120 > 24 => 24 draws at weight 1/24.
        let present: Vec<_> = (0..5usize)
            .map(|c| (c, ValueAt::Value(1.0f64)))
            .collect();
        let obs = observations_at(&present, 0, &TiePolicy::default(), &mut rng()).unwrap();
        assert_eq!(obs.len(), 24);
        assert!(obs.iter().all(|o| (o.weight - 1.0 / 24.0).abs() < 1e-15));
    }

    #[test]
    fn weights_multiply_across_groups() {
        // groups of sizes 2 and 3: 2! * 3! = 12 <= 24 orderings at 1/12.
        let groups = vec![vec![0usize, 1], vec![2, 3, 4]];
        let out: Vec<(Vec<usize>, f64)> = expand_ties(&groups, 24, 24, &mut rng()).unwrap();
        assert_eq!(out.len(), 12);
        assert!(out.iter().all(|(_, w)| (w - 1.0 / 12.0).abs() < 1e-15));
        let total: f64 = out.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn horizon_cutoff_yields_partial_rankings() {
        let grid = TimeGrid::new(vec![1.0f64, 2.0, 3.0], Spacing::Explicit).unwrap();
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let trajs = vec![
            Trajectory::new("a", "i", 0, vec![(1.0, 1.0)], 1.5).unwrap(),
            Trajectory::new("b", "i", 0, vec![(1.0, 2.0)], 3.0).unwrap(),
            Trajectory::new("c", "i", 0, vec![(1.0, 3.0)], 3.0).unwrap(),
        ];
        let (obs, diag) =
            rankings_from_trajectories(&trajs, &ids, &grid, &TiePolicy::default(), &mut rng())
                .unwrap();
        assert!(diag.skipped.is_empty());
        let at = |ti: usize| obs.iter().filter(|o| o.timepoint == ti).collect::<Vec<_>>();
        assert_eq!(at(0)[0].ordering, vec![0, 1, 2]);
        assert_eq!(at(1)[0].ordering, vec![1, 2]); // a ran out of budget
        assert_eq!(at(2)[0].ordering, vec![1, 2]);
    }

    #[test]
    fn lonely_timepoints_are_skipped() {
        let grid = TimeGrid::new(vec![1.0f64, 2.0], Spacing::Explicit).unwrap();
        let ids: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let trajs = vec![
            Trajectory::new("a", "i", 0, vec![(1.0, 1.0)], 1.0).unwrap(),
            Trajectory::new("b", "i", 0, vec![(1.0, 2.0)], 2.0).unwrap(),
        ];
        let (obs, diag) =
            rankings_from_trajectories(&trajs, &ids, &grid, &TiePolicy::default(), &mut rng())
                .unwrap();
        assert_eq!(obs.len(), 1);
        assert_eq!(diag.skipped, vec![(1, 1)]);
    }

    #[test]
    fn mixed_instances_rejected() {
        let grid = TimeGrid::new(vec![1.0f64, 2.0], Spacing::Explicit).unwrap();
        let ids: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let trajs = vec![
            Trajectory::new("a", "i1", 0, vec![(1.0, 1.0)], 2.0).unwrap(),
            Trajectory::new("b", "i2", 0, vec![(1.0, 2.0)], 2.0).unwrap(),
        ];
        assert!(
            rankings_from_trajectories(&trajs, &ids, &grid, &TiePolicy::default(), &mut rng())
                .is_err()
        );
    }
}
