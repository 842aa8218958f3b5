//! The racing loop: sample a batch of instances, run the still-unresolved
//! algorithms up to their maximum unresolved timepoint, refit the posterior
//! on the full archive, eliminate confidently dominated algorithms, latch
//! newly resolved pairwise relations, and adapt the batch size — until every
//! pair among the candidates is resolved at every timepoint.
//!
//! The observation archive is derived: the source of truth is the set of
//! executed runs (trajectories or simulated utilities), and rankings are
//! regenerated from it on every refit. This is what makes late algorithm
//! injection exact: a newcomer replayed on cached instances simply appears
//! in those instances' regenerated rankings.

use crate::beliefs::{
    check_elimination, update_resolution, EliminationMode, ResolutionMatrix, ResolutionMode,
};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::grid::TimeGrid;
use crate::inference::{posterior_update, InferenceConfig, RatingSamples};
use crate::priors::{ModelSpec, PriorModel};
use crate::ranking::{observations_at, RankingObservation, TiePolicy};
use crate::stats::{derive_rng, derive_seed, gumbel};
use crate::synth::GroundTruth;
use crate::trajectory::{
    run_anytime, AnytimeAlgorithm, InstanceProvider, Trajectory, ValueAt,
};
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Where rankings come from: each (instance, algorithm) pair is executed up
/// to some horizon and can afterwards report a comparison value at every
/// grid point it covers.
pub trait RankingSource<F: Float>: Send {
    /// Execute or replay `algo` on instance `index` up to `horizon`.
    /// Returns the budget consumed by this call (0 when fully cached).
    fn run(&mut self, index: u64, algo: usize, horizon: F) -> Result<F>;

    /// Executed horizon for the pair, if it ever ran.
    fn horizon(&self, index: u64, algo: usize) -> Option<F>;

    /// Comparison values at the grid points: None beyond the executed
    /// horizon, `NoneYet` where the run was alive but had produced nothing.
    /// Lower values rank better.
    fn values(&self, index: u64, algo: usize, grid: &TimeGrid<F>) -> Result<Vec<Option<ValueAt<F>>>>;

    /// Run a whole batch; the default is sequential, implementations may
    /// parallelize as long as the stored results are deterministic.
    fn run_batch(&mut self, jobs: &[(u64, usize, F)]) -> Result<Vec<F>> {
        jobs.iter()
            .map(|&(idx, algo, h)| self.run(idx, algo, h))
            .collect()
    }

    /// Re-register a run while restoring a checkpoint (no cost accounting).
    fn restore_run(&mut self, index: u64, algo: usize, horizon: F) -> Result<()> {
        self.run(index, algo, horizon).map(|_| ())
    }
}

/// Runs real optimizers through the trajectory recorder and caches the
/// best-so-far trajectories.
pub struct TrajectorySource<F> {
    algorithms: Vec<Box<dyn AnytimeAlgorithm>>,
    provider: Box<dyn InstanceProvider>,
    master_seed: u64,
    cache: BTreeMap<(u64, usize), Trajectory<F>>,
}

impl<F: Float> TrajectorySource<F> {
    pub fn new(
        algorithms: Vec<Box<dyn AnytimeAlgorithm>>,
        provider: Box<dyn InstanceProvider>,
        master_seed: u64,
    ) -> Self {
        Self {
            algorithms,
            provider,
            master_seed,
            cache: BTreeMap::new(),
        }
    }

    pub fn algorithm_ids(&self) -> Vec<String> {
        self.algorithms.iter().map(|a| a.id().to_string()).collect()
    }

    /// Register another optimizer; its registry index is returned.
    pub fn push_algorithm(&mut self, algorithm: Box<dyn AnytimeAlgorithm>) -> usize {
        self.algorithms.push(algorithm);
        self.algorithms.len() - 1
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory<F>> {
        self.cache.values()
    }

    /// Adopt an already-recorded trajectory (checkpoint restore). The
    /// algorithm id must match a registered optimizer.
    pub fn insert_trajectory(&mut self, traj: Trajectory<F>) -> Result<()> {
        let algo = self
            .algorithms
            .iter()
            .position(|a| a.id() == traj.algorithm_id)
            .ok_or_else(|| Error::invalid(format!("unknown algorithm {:?}", traj.algorithm_id)))?;
        let index = parse_instance_index(&traj.instance_id)?;
        let keep = match self.cache.get(&(index, algo)) {
            Some(existing) => traj.horizon > existing.horizon,
            None => true,
        };
        if keep {
            self.cache.insert((index, algo), traj);
        }
        Ok(())
    }

    fn run_seed(&self, index: u64, algo: usize) -> u64 {
        derive_seed(self.master_seed, &[0x72756e_u64, index, algo as u64])
    }
}

fn parse_instance_index(id: &str) -> Result<u64> {
    id.rsplit('#')
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse {
            what: format!("instance id {id:?}"),
            reason: "expected a #<index> suffix".into(),
        })
}

impl<F: Float> RankingSource<F> for TrajectorySource<F> {
    fn run(&mut self, index: u64, algo: usize, horizon: F) -> Result<F> {
        if algo >= self.algorithms.len() {
            return Err(Error::UnknownAlgorithm(algo));
        }
        let old = self
            .cache
            .get(&(index, algo))
            .map(|t| t.horizon)
            .unwrap_or(F::zero());
        if old >= horizon {
            return Ok(F::zero());
        }
        let instance = self.provider.instance(index, self.master_seed);
        let traj = run_anytime(
            self.algorithms[algo].as_ref(),
            instance.as_ref(),
            horizon,
            self.run_seed(index, algo),
        )?;
        self.cache.insert((index, algo), traj);
        Ok(horizon - old)
    }

    fn horizon(&self, index: u64, algo: usize) -> Option<F> {
        self.cache.get(&(index, algo)).map(|t| t.horizon)
    }

    fn values(&self, index: u64, algo: usize, grid: &TimeGrid<F>) -> Result<Vec<Option<ValueAt<F>>>> {
        let traj = self
            .cache
            .get(&(index, algo))
            .ok_or_else(|| Error::invalid("pair never ran"))?;
        Ok(grid
            .points()
            .iter()
            .map(|&t| traj.evaluate_at(t).ok())
            .collect())
    }

    fn run_batch(&mut self, jobs: &[(u64, usize, F)]) -> Result<Vec<F>> {
        // Compute fresh trajectories in parallel, then merge in job order.
        let needed: Vec<(usize, (u64, usize, F))> = jobs
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, (idx, algo, h))| {
                self.cache
                    .get(&(idx, algo))
                    .map(|t| t.horizon < h)
                    .unwrap_or(true)
            })
            .collect();
        let algorithms = &self.algorithms;
        let provider = &self.provider;
        let master = self.master_seed;
        let fresh: Vec<Result<((u64, usize), Trajectory<F>)>> = needed
            .par_iter()
            .map(|&(_, (idx, algo, h))| {
                if algo >= algorithms.len() {
                    return Err(Error::UnknownAlgorithm(algo));
                }
                let instance = provider.instance(idx, master);
                let seed = derive_seed(master, &[0x72756e_u64, idx, algo as u64]);
                let traj = run_anytime(algorithms[algo].as_ref(), instance.as_ref(), h, seed)?;
                Ok(((idx, algo), traj))
            })
            .collect();
        for r in fresh {
            let (key, traj) = r?;
            self.cache.insert(key, traj);
        }
        // Account costs after the fact, in deterministic job order.
        let mut costs = Vec::with_capacity(jobs.len());
        let mut seen: BTreeMap<(u64, usize), F> = BTreeMap::new();
        for &(idx, algo, h) in jobs {
            let prior = seen
                .get(&(idx, algo))
                .copied()
                .unwrap_or_else(|| F::zero());
            let charged = if h > prior { h - prior } else { F::zero() };
            seen.insert((idx, algo), h.max(prior));
            costs.push(charged);
        }
        Ok(costs)
    }

    fn restore_run(&mut self, index: u64, algo: usize, horizon: F) -> Result<()> {
        let cached = self
            .cache
            .get(&(index, algo))
            .map(|t| t.horizon >= horizon)
            .unwrap_or(false);
        if cached {
            return Ok(());
        }
        self.run(index, algo, horizon).map(|_| ())
    }
}

/// Exact Plackett-Luce simulator as a ranking source: each instance is a
/// fresh set of Gumbel-perturbed utilities around the true log-ratings,
/// regenerated deterministically from the seed (no cache needed).
pub struct SyntheticSource<F> {
    truth: GroundTruth<F>,
    master_seed: u64,
    horizons: BTreeMap<(u64, usize), F>,
}

impl<F: Float> SyntheticSource<F> {
    pub fn new(truth: GroundTruth<F>, master_seed: u64) -> Self {
        Self {
            truth,
            master_seed,
            horizons: BTreeMap::new(),
        }
    }

    pub fn truth(&self) -> &GroundTruth<F> {
        &self.truth
    }

    fn utility(&self, index: u64, algo: usize, t_idx: usize) -> F {
        let mut rng = derive_rng(
            self.master_seed,
            &[0x7379_u64, index, algo as u64, t_idx as u64],
        );
        self.truth.mu_star[(t_idx, algo)] + gumbel::<F, _>(&mut rng)
    }
}

impl<F: Float> RankingSource<F> for SyntheticSource<F> {
    fn run(&mut self, index: u64, algo: usize, horizon: F) -> Result<F> {
        if algo >= self.truth.n() {
            return Err(Error::UnknownAlgorithm(algo));
        }
        let old = self
            .horizons
            .get(&(index, algo))
            .copied()
            .unwrap_or(F::zero());
        if old >= horizon {
            return Ok(F::zero());
        }
        self.horizons.insert((index, algo), horizon);
        Ok(horizon - old)
    }

    fn horizon(&self, index: u64, algo: usize) -> Option<F> {
        self.horizons.get(&(index, algo)).copied()
    }

    fn values(&self, index: u64, algo: usize, grid: &TimeGrid<F>) -> Result<Vec<Option<ValueAt<F>>>> {
        let horizon = self
            .horizons
            .get(&(index, algo))
            .copied()
            .ok_or_else(|| Error::invalid("pair never ran"))?;
        Ok(grid
            .points()
            .iter()
            .enumerate()
            .map(|(ti, &t)| {
                if t <= horizon {
                    // Negated utility: rankings sort ascending (lower wins).
                    Some(ValueAt::Value(-self.utility(index, algo, ti)))
                } else {
                    None
                }
            })
            .collect())
    }
}

/// Knobs of one race.
#[derive(Debug, Clone)]
pub struct RaceConfig<F> {
    pub alpha: F,
    pub epsilon: F,
    pub elimination: EliminationMode,
    pub resolution: ResolutionMode,
    pub batch_init: usize,
    pub batch_min: usize,
    pub batch_max: usize,
    pub max_rounds: usize,
    pub seed: u64,
    pub grid: TimeGrid<F>,
    pub model: ModelSpec,
    pub inference: InferenceConfig,
    pub ties: TiePolicy<F>,
}

impl<F: Float> RaceConfig<F> {
    pub fn new(grid: TimeGrid<F>, model: ModelSpec, seed: u64) -> Self {
        Self {
            alpha: F::cast(0.99),
            epsilon: F::cast(0.05),
            elimination: EliminationMode::Joint,
            resolution: ResolutionMode::Crossing,
            batch_init: 8,
            batch_min: 8,
            batch_max: 64,
            max_rounds: 200,
            seed,
            grid,
            model,
            inference: InferenceConfig::default(),
            ties: TiePolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > F::cast(0.5) && self.alpha <= F::one()) {
            return Err(Error::config("alpha", "must lie in (0.5, 1]"));
        }
        if !(self.epsilon >= F::zero() && self.epsilon < F::cast(0.5)) {
            return Err(Error::config("epsilon", "must lie in [0, 0.5)"));
        }
        if self.batch_min == 0 || self.batch_min > self.batch_init || self.batch_init > self.batch_max
        {
            return Err(Error::config(
                "batch",
                "need 1 <= batch_min <= batch_init <= batch_max",
            ));
        }
        if self.max_rounds == 0 {
            return Err(Error::config("max_rounds", "must be positive"));
        }
        Ok(())
    }
}

/// Batch-size adaptation: double when a round resolves nothing, halve when
/// more than 20% of the open pairs resolve, clip to [min, max].
pub fn adapt_batch_size(
    b: usize,
    resolved_pairs: usize,
    open_pairs_at_start: usize,
    b_min: usize,
    b_max: usize,
) -> usize {
    if open_pairs_at_start == 0 {
        return b;
    }
    if resolved_pairs == 0 {
        return (b * 2).min(b_max);
    }
    if resolved_pairs as f64 / open_pairs_at_start as f64 > 0.2 {
        return (b / 2).max(b_min);
    }
    b
}

/// One executed run, for cost accounting and checkpointing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRecord<F> {
    pub instance: u64,
    pub algo: usize,
    pub horizon: F,
}

/// Resumable state of a race.
#[derive(Debug, Clone)]
pub struct RaceState<F> {
    pub algorithm_ids: Vec<String>,
    pub candidates: Vec<usize>,
    /// victim -> (round, dominator)
    pub eliminated: BTreeMap<usize, (usize, usize)>,
    pub resolution: ResolutionMatrix,
    pub round: usize,
    pub batch_size: usize,
    /// Sampled instance indices in draw order.
    pub instance_log: Vec<u64>,
    pub runs: Vec<RunRecord<F>>,
    pub total_cost: F,
    /// Set when the race stopped at max_rounds with open pairs.
    pub partially_resolved: bool,
}

impl<F: Float> RaceState<F> {
    fn new(algorithm_ids: Vec<String>, timepoints: usize, batch_init: usize) -> Self {
        let n = algorithm_ids.len();
        Self {
            algorithm_ids,
            candidates: (0..n).collect(),
            eliminated: BTreeMap::new(),
            resolution: ResolutionMatrix::new(n, timepoints),
            round: 0,
            batch_size: batch_init,
            instance_log: Vec::new(),
            runs: Vec::new(),
            total_cost: F::zero(),
            partially_resolved: false,
        }
    }

    pub fn n(&self) -> usize {
        self.algorithm_ids.len()
    }

    pub fn is_complete(&self) -> bool {
        self.resolution.open_pairs(&self.candidates).is_empty()
    }
}

/// Per-round summary, serialized into the round log.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub batch_size: usize,
    pub new_instances: Vec<u64>,
    pub cumulative_instances: usize,
    /// (victim, dominator) ids.
    pub eliminations: Vec<(String, String)>,
    pub newly_resolved_entries: usize,
    pub resolved_pairs: usize,
    pub open_pairs_at_start: usize,
    pub resolved_fraction_total: f64,
    pub inference_converged: bool,
    /// True when an unconverged posterior made the round latch nothing.
    pub decisions_skipped: bool,
    pub warnings: Vec<String>,
    pub cost_this_round: f64,
    pub cumulative_cost: f64,
    /// Aggregated run counts this round: (algorithm id, horizon, count).
    pub runs_this_round: Vec<(String, f64, usize)>,
    /// Per algorithm: the largest joint dominance probability any opponent
    /// holds over it.
    pub max_dominance: Vec<(String, f64)>,
    /// Posterior summary per (algorithm, timepoint).
    pub rating_summary: Vec<RatingSummaryRow>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RatingSummaryRow {
    pub algorithm: String,
    pub t: f64,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
}

/// Final result of a race.
pub struct RaceOutcome<F> {
    pub pareto: Vec<String>,
    pub pareto_indices: Vec<usize>,
    pub samples: RatingSamples<F>,
    pub rounds: Vec<RoundReport>,
    pub fully_resolved: bool,
}

/// A running race: configuration, mutable state, and the ranking source.
pub struct Race<F: Float, S: RankingSource<F>> {
    pub config: RaceConfig<F>,
    pub state: RaceState<F>,
    source: S,
    model: PriorModel<F>,
    last_samples: Option<RatingSamples<F>>,
}

impl<F: Float, S: RankingSource<F>> Race<F, S> {
    pub fn new(config: RaceConfig<F>, algorithm_ids: Vec<String>, source: S) -> Result<Self> {
        config.validate()?;
        if algorithm_ids.len() < 2 {
            return Err(Error::invalid("need at least 2 algorithms"));
        }
        let mut unique = algorithm_ids.clone();
        unique.sort();
        unique.dedup();
        if unique.len() != algorithm_ids.len() {
            return Err(Error::invalid("duplicate algorithm ids"));
        }
        let model = config
            .model
            .build(algorithm_ids.len(), config.grid.points().to_vec())?;
        let state = RaceState::new(algorithm_ids, config.grid.len(), config.batch_init);
        Ok(Self {
            config,
            state,
            source,
            model,
            last_samples: None,
        })
    }

    /// Resume from a checkpointed state: the source is rebuilt by replaying
    /// the run ledger (cached results are reused where present).
    pub fn from_state(config: RaceConfig<F>, state: RaceState<F>, mut source: S) -> Result<Self> {
        config.validate()?;
        let model = config
            .model
            .build(state.n(), config.grid.points().to_vec())?;
        for r in &state.runs {
            source.restore_run(r.instance, r.algo, r.horizon)?;
        }
        Ok(Self {
            config,
            state,
            source,
            model,
            last_samples: None,
        })
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    /// Mutable access, used to register a new optimizer with the source
    /// before `add_algorithm`.
    pub fn source_mut(&mut self) -> &mut S {
        &mut self.source
    }

    pub fn model(&self) -> &PriorModel<F> {
        &self.model
    }

    pub fn last_samples(&self) -> Option<&RatingSamples<F>> {
        self.last_samples.as_ref()
    }

    /// Candidates that still have at least one unresolved pair entry.
    pub fn unresolved_algorithms(&self) -> Vec<usize> {
        let entries = self
            .state
            .resolution
            .unresolved_entries(&self.state.candidates);
        let mut flags = vec![false; self.state.n()];
        for (a, b, _) in entries {
            flags[a] = true;
            flags[b] = true;
        }
        self.state
            .candidates
            .iter()
            .copied()
            .filter(|&a| flags[a])
            .collect()
    }

    /// Largest timepoint index at which the algorithm still has an
    /// unresolved pair; None when fully resolved (not sampled any more).
    pub fn max_unresolved_timepoint(&self, algo: usize) -> Option<usize> {
        self.state
            .resolution
            .unresolved_entries(&self.state.candidates)
            .iter()
            .filter(|&&(a, b, _)| a == algo || b == algo)
            .map(|&(_, _, t)| t)
            .max()
    }

    fn observation_rng(&self, instance: u64) -> rand_chacha::ChaCha8Rng {
        derive_rng(self.config.seed, &[0x6f6273_u64, instance])
    }

    /// Candidates whose pair with some other candidate carries a latched
    /// one-way dominance label at every timepoint (against the entry
    /// candidate set, like the probability-based check).
    fn latched_pointwise_dominations(&self) -> Vec<(usize, usize)> {
        use crate::beliefs::Relation;
        let candidates = self.state.candidates.clone();
        let t_len = self.config.grid.len();
        let mut out = Vec::new();
        for &victim in &candidates {
            let dominator = candidates.iter().copied().find(|&b| {
                b != victim
                    && (0..t_len).all(|t| {
                        matches!(
                            self.state.resolution.label(b, victim, t),
                            Some(Relation::DominatesIj)
                        )
                    })
            });
            if let Some(b) = dominator {
                out.push((victim, b));
            }
        }
        out
    }

    /// Regenerate the full ranking archive from the executed runs.
    ///
    /// Identical orderings at the same timepoint are merged with summed
    /// weights — the weighted likelihood is exactly the same, and the
    /// per-refit cost stays bounded as instances accumulate.
    pub fn observations(&self) -> Result<Vec<RankingObservation<F>>> {
        let mut merged: BTreeMap<(usize, Vec<usize>, Vec<usize>), F> = BTreeMap::new();
        let grid = &self.config.grid;
        let n = self.state.n();
        for &instance in &self.state.instance_log {
            let mut per_algo: Vec<(usize, Vec<Option<ValueAt<F>>>)> = Vec::new();
            for algo in 0..n {
                if self.source.horizon(instance, algo).is_some() {
                    per_algo.push((algo, self.source.values(instance, algo, grid)?));
                }
            }
            if per_algo.len() < 2 {
                continue;
            }
            let mut rng = self.observation_rng(instance);
            for ti in 0..grid.len() {
                let present: Vec<(usize, ValueAt<F>)> = per_algo
                    .iter()
                    .filter_map(|(algo, vals)| vals[ti].map(|v| (*algo, v)))
                    .collect();
                if present.len() < 2 {
                    continue;
                }
                for o in observations_at(&present, ti, &self.config.ties, &mut rng)? {
                    *merged
                        .entry((o.timepoint, o.ordering, o.pool))
                        .or_insert(F::zero()) += o.weight;
                }
            }
        }
        Ok(merged
            .into_iter()
            .map(|((timepoint, ordering, pool), weight)| RankingObservation {
                timepoint,
                ordering,
                pool,
                weight,
            })
            .collect())
    }

    fn refit(&self) -> Result<RatingSamples<F>> {
        let obs = self.observations()?;
        posterior_update(
            &obs,
            &self.model,
            &self.config.inference,
            derive_seed(self.config.seed, &[0x706f_u64, self.state.round as u64]),
        )
    }

    /// Execute one round. Requires at least one unresolved pair.
    pub fn round(&mut self) -> Result<RoundReport> {
        let start_candidates = self.state.candidates.clone();
        let open_at_start = self.state.resolution.open_pairs(&start_candidates);
        if open_at_start.is_empty() {
            return Err(Error::invalid("race already fully resolved"));
        }
        self.state.round += 1;
        let round = self.state.round;
        let batch = self.state.batch_size;

        // (1) Draw fresh instances.
        let first_index = self.state.instance_log.len() as u64;
        let new_instances: Vec<u64> = (0..batch as u64).map(|k| first_index + k).collect();
        self.state.instance_log.extend(&new_instances);

        // (2) Run every unresolved algorithm up to its own horizon.
        let active = self.unresolved_algorithms();
        let mut jobs = Vec::with_capacity(new_instances.len() * active.len());
        for &instance in &new_instances {
            for &algo in &active {
                let t_idx = self
                    .max_unresolved_timepoint(algo)
                    .expect("active algorithms have unresolved entries");
                let horizon = self.config.grid.points()[t_idx];
                jobs.push((instance, algo, horizon));
            }
        }
        let costs = self.source.run_batch(&jobs)?;
        let mut cost_this_round = F::zero();
        for (&(instance, algo, horizon), &cost) in jobs.iter().zip(&costs) {
            self.state.runs.push(RunRecord {
                instance,
                algo,
                horizon,
            });
            cost_this_round += cost;
        }
        self.state.total_cost += cost_this_round;

        // (3)+(4) Regenerate rankings, full posterior refit.
        let samples = self.refit()?;
        let converged = samples.diagnostics.converged;
        let mut warnings = samples.diagnostics.notes.clone();

        // (5) Eliminate, then latch resolutions; both skipped when the
        // posterior is flagged unconverged (conservative: only delays).
        let mut eliminations = Vec::new();
        let mut newly_resolved = 0usize;
        if converged {
            if self.state.candidates.len() >= 2 {
                let eliminated = check_elimination(
                    &self.state.candidates,
                    &samples,
                    self.config.alpha,
                    self.config.elimination,
                )?;
                for (victim, dominator) in eliminated {
                    self.state.candidates.retain(|&a| a != victim);
                    self.state
                        .eliminated
                        .insert(victim, (round, dominator));
                    self.state.resolution.mark_eliminated(victim);
                    eliminations.push((
                        self.state.algorithm_ids[victim].clone(),
                        self.state.algorithm_ids[dominator].clone(),
                    ));
                }
            }
            let update = update_resolution(
                &mut self.state.resolution,
                &samples,
                &self.state.candidates,
                self.config.alpha,
                self.config.epsilon,
                self.config.resolution,
            )?;
            newly_resolved = update.newly_resolved.len();
            warnings.extend(update.warnings);

            // Pointwise mode: a pair latched as one-way dominance at every
            // timepoint is a concluded pointwise elimination, even when the
            // victim's sampling already stopped and the current marginals
            // have drifted. Each latch was an alpha-confident decision.
            if self.config.elimination == EliminationMode::Pointwise {
                let eliminated = self.latched_pointwise_dominations();
                for (victim, dominator) in eliminated {
                    self.state.candidates.retain(|&a| a != victim);
                    self.state.eliminated.insert(victim, (round, dominator));
                    self.state.resolution.mark_eliminated(victim);
                    eliminations.push((
                        self.state.algorithm_ids[victim].clone(),
                        self.state.algorithm_ids[dominator].clone(),
                    ));
                }
            }
        }

        // (6) Adapt the batch size from pair-level progress.
        let open_now = self.state.resolution.open_pairs(&start_candidates).len();
        let resolved_pairs = open_at_start.len() - open_now;
        self.state.batch_size = adapt_batch_size(
            batch,
            resolved_pairs,
            open_at_start.len(),
            self.config.batch_min,
            self.config.batch_max,
        );

        // (7) Report.
        let report = self.report(
            round,
            batch,
            new_instances,
            eliminations,
            newly_resolved,
            resolved_pairs,
            open_at_start.len(),
            converged,
            warnings,
            cost_this_round,
            &jobs,
            &samples,
        );
        self.last_samples = Some(samples);
        Ok(report)
    }

    #[allow(clippy::too_many_arguments)]
    fn report(
        &self,
        round: usize,
        batch_size: usize,
        new_instances: Vec<u64>,
        eliminations: Vec<(String, String)>,
        newly_resolved_entries: usize,
        resolved_pairs: usize,
        open_pairs_at_start: usize,
        inference_converged: bool,
        warnings: Vec<String>,
        cost_this_round: F,
        jobs: &[(u64, usize, F)],
        samples: &RatingSamples<F>,
    ) -> RoundReport {
        let ids = &self.state.algorithm_ids;
        let n = self.state.n();

        let mut run_counts: BTreeMap<(usize, u64), usize> = BTreeMap::new();
        for &(_, algo, horizon) in jobs {
            *run_counts
                .entry((algo, horizon.to64().to_bits()))
                .or_insert(0) += 1;
        }
        let runs_this_round = run_counts
            .into_iter()
            .map(|((algo, hbits), count)| (ids[algo].clone(), f64::from_bits(hbits), count))
            .collect();

        let mut max_dominance = Vec::with_capacity(n);
        for b in 0..n {
            let mut worst = 0.0f64;
            for a in 0..n {
                if a != b {
                    worst = worst.max(
                        crate::beliefs::p_dominates_anytime(samples, a, b).to64(),
                    );
                }
            }
            max_dominance.push((ids[b].clone(), worst));
        }

        let mut rating_summary = Vec::with_capacity(n * samples.timepoints());
        for algo in 0..n {
            for ti in 0..samples.timepoints() {
                rating_summary.push(RatingSummaryRow {
                    algorithm: ids[algo].clone(),
                    t: self.config.grid.points()[ti].to64(),
                    mean: samples.mean(ti, algo).to64(),
                    q025: samples.rating_quantile(ti, algo, F::cast(0.025)).to64(),
                    q975: samples.rating_quantile(ti, algo, F::cast(0.975)).to64(),
                });
            }
        }

        let total_pairs = n * (n - 1) / 2;
        let open_total = self
            .state
            .resolution
            .open_pairs(&(0..n).collect::<Vec<_>>())
            .len();
        RoundReport {
            round,
            batch_size,
            cumulative_instances: self.state.instance_log.len(),
            new_instances,
            eliminations,
            newly_resolved_entries,
            resolved_pairs,
            open_pairs_at_start,
            resolved_fraction_total: (total_pairs - open_total) as f64 / total_pairs.max(1) as f64,
            inference_converged,
            decisions_skipped: !inference_converged,
            warnings,
            cost_this_round: cost_this_round.to64(),
            cumulative_cost: self.state.total_cost.to64(),
            runs_this_round,
            max_dominance,
            rating_summary,
        }
    }

    /// Drive rounds until every pair among the candidates is resolved at
    /// every timepoint, or the round cap is hit (the result is then flagged
    /// partially resolved but still valid).
    pub fn run(&mut self) -> Result<RaceOutcome<F>> {
        let mut rounds = Vec::new();
        while !self.state.is_complete() && self.state.round < self.config.max_rounds {
            rounds.push(self.round()?);
        }
        self.state.partially_resolved = !self.state.is_complete();
        let samples = match self.last_samples.take() {
            Some(s) => s,
            None => self.refit()?,
        };
        self.last_samples = Some(samples.clone());
        let pareto_indices = self.state.candidates.clone();
        let pareto = pareto_indices
            .iter()
            .map(|&a| self.state.algorithm_ids[a].clone())
            .collect();
        Ok(RaceOutcome {
            pareto,
            pareto_indices,
            samples,
            rounds,
            fully_resolved: !self.state.partially_resolved,
        })
    }

    /// Inject a new algorithm mid-race: it enters with the prior, joins the
    /// candidate set with all pairs unresolved, and is replayed on the most
    /// recently sampled cached instances (up to one batch) so its rankings
    /// line up with the incumbents' cached runs.
    pub fn add_algorithm(&mut self, id: String) -> Result<()> {
        if self.state.algorithm_ids.contains(&id) {
            return Err(Error::DuplicateAlgorithm(id));
        }
        let algo = self.state.n();
        self.state.algorithm_ids.push(id);
        self.state.candidates.push(algo);
        self.state.resolution.add_algorithm();
        self.model = self
            .config
            .model
            .build(self.state.n(), self.config.grid.points().to_vec())?;

        // Replay the newest cached instances to the full horizon.
        let replay: Vec<u64> = self
            .state
            .instance_log
            .iter()
            .rev()
            .take(self.state.batch_size)
            .copied()
            .collect();
        let horizon = self.config.grid.last();
        let jobs: Vec<(u64, usize, F)> = replay.iter().map(|&i| (i, algo, horizon)).collect();
        let costs = self.source.run_batch(&jobs)?;
        let mut cost = F::zero();
        for (&(instance, _, horizon), &c) in jobs.iter().zip(&costs) {
            self.state.runs.push(RunRecord {
                instance,
                algo,
                horizon,
            });
            cost += c;
        }
        self.state.total_cost += cost;
        self.last_samples = None;
        Ok(())
    }
}
