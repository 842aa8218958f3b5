//! Statistical and structural properties beyond the per-module unit tests:
//! unbiasedness of tie subsampling, the portfolio max-aggregation identity,
//! prior predictive sanity, elimination calibration, early-stop validity,
//! and late algorithm injection.

use anyrace::beliefs::{check_elimination, EliminationMode, ResolutionMode};
use anyrace::grid::TimeGrid;
use anyrace::inference::{posterior_update, InferenceConfig, Method, RatingSamples};
use anyrace::plmodel::{pl_log_likelihood, portfolio_rating};
use anyrace::priors::{ModelSpec, PriorModel};
use anyrace::race::{Race, RaceConfig, SyntheticSource, TrajectorySource};
use anyrace::ranking::{expand_ties, RankingObservation};
use anyrace::stats::{derive_rng, gumbel};
use anyrace::synth::{
    sample_ground_truth, GroundTruth, GroundTruthConfig, OnePlusOneEs, RandomSearch, ToyProvider,
};
use ndarray::{Array2, Array3};
use rand::Rng;

fn random_simplex(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n).map(|_| -f64::ln(rng.random_range(1e-9..1.0))).collect();
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= s);
    row
}

#[test]
fn tie_subsampling_is_unbiased() {
    // 5-way tie: 120 orderings, above the enumeration cap of 24.
    let n = 5usize;
    let mut rng = derive_rng(41, &[1]);
    let theta_vec = random_simplex(n, &mut rng);
    let theta = Array2::from_shape_vec((1, n), theta_vec).unwrap();

    let groups = vec![(0..n).collect::<Vec<usize>>()];
    // Oracle: exact enumeration with a large cap.
    let full: Vec<(Vec<usize>, f64)> = expand_ties(&groups, 200, 24, &mut rng).unwrap();
    assert_eq!(full.len(), 120);
    let loglik = |orderings: &[(Vec<usize>, f64)]| -> f64 {
        orderings
            .iter()
            .map(|(o, w)| {
                w * pl_log_likelihood(
                    &[RankingObservation::full(0, o.clone(), 1.0)],
                    &theta.view(),
                )
                .unwrap()
            })
            .sum()
    };
    let exact = loglik(&full);

    let mut total = 0.0;
    let trials = 1200usize;
    for t in 0..trials {
        let mut rng = derive_rng(42, &[t as u64]);
        let sub = expand_ties(&groups, 24, 24, &mut rng).unwrap();
        assert_eq!(sub.len(), 24);
        total += loglik(&sub);
    }
    let mean = total / trials as f64;
    let rel = (mean - exact).abs() / exact.abs();
    assert!(rel < 0.02, "subsampled mean {mean} vs exact {exact} (rel {rel:.4})");
}

#[test]
fn partial_ranking_equals_full_minus_bottom() {
    let mut rng = derive_rng(43, &[0]);
    for _ in 0..50 {
        let n = rng.random_range(3..7usize);
        let theta = Array2::from_shape_vec((1, n), random_simplex(n, &mut rng)).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let full = RankingObservation::full(0, perm.clone(), 1.0);
        let top = RankingObservation {
            timepoint: 0,
            ordering: perm[..n - 1].to_vec(),
            pool: vec![perm[n - 1]],
            weight: 1.0,
        };
        let a = pl_log_likelihood(&[full], &theta.view()).unwrap();
        let b = pl_log_likelihood(&[top], &theta.view()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn portfolio_rating_matches_gumbel_max_simulation() {
    let mut rng = derive_rng(44, &[0]);
    let theta = random_simplex(5, &mut rng);
    // Disjoint portfolios, one with a repeated member.
    for (s_a, s_b) in [
        (vec![0usize, 1], vec![2usize, 3, 4]),
        (vec![0, 0], vec![1, 2]),
    ] {
        let ra = portfolio_rating(&theta, &s_a).unwrap();
        let rb = portfolio_rating(&theta, &s_b).unwrap();
        let expect = ra / (ra + rb);
        let draws = 1_000_000usize;
        let mut wins = 0usize;
        for _ in 0..draws {
            let max_of = |members: &[usize], rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
                members
                    .iter()
                    .map(|&i| theta[i].ln() + gumbel::<f64, _>(rng))
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            if max_of(&s_a, &mut rng) > max_of(&s_b, &mut rng) {
                wins += 1;
            }
        }
        let emp = wins as f64 / draws as f64;
        let sd = (expect * (1.0 - expect) / draws as f64).sqrt();
        assert!(
            (emp - expect).abs() < 3.0 * sd,
            "portfolio {s_a:?} vs {s_b:?}: {emp:.5} vs {expect:.5}"
        );
    }
}

#[test]
fn prior_predictive_draws_stay_on_simplex() {
    let times: Vec<f64> = (0..5).map(|i| 0.2 + 0.2 * i as f64).collect();
    let models: Vec<PriorModel<f64>> = vec![
        PriorModel::independent_dirichlet(4, times.clone(), 1.0).unwrap(),
        PriorModel::hierarchical_dirichlet(4, times.clone(), 1.0).unwrap(),
        PriorModel::gp_exact(
            4,
            times.clone(),
            anyrace::priors::kernels::MaternNu::ThreeHalves,
            Default::default(),
        )
        .unwrap(),
        PriorModel::gp_hsgp(
            4,
            times.clone(),
            anyrace::priors::kernels::MaternNu::ThreeHalves,
            Default::default(),
            16,
            1.5,
        )
        .unwrap(),
        PriorModel::random_walk(4, times.clone()).unwrap(),
        PriorModel::bspline(4, times.clone(), 4, 3).unwrap(),
    ];
    for model in &models {
        let mut rng = derive_rng(45, &[model.dim() as u64]);
        for _ in 0..10_000 {
            let params = model.sample_params(&mut rng).unwrap();
            let theta = model.theta(&params).unwrap();
            for row in theta.rows() {
                let mut sum = 0.0;
                for &v in row {
                    assert!(v.is_finite() && v > 0.0, "{:?}", model.kind());
                    sum += v;
                }
                assert!((sum - 1.0).abs() < 1e-8, "{:?}", model.kind());
            }
        }
    }
}

#[test]
fn elimination_calibration_on_separated_truth() {
    // True win probability 0.6 for B over A at both timepoints: at this
    // sample size the decision margin is ~8 binomial sigma, so pointwise
    // elimination fires essentially always.
    let mut eliminated = 0usize;
    let reps = 20usize;
    for rep in 0..reps {
        let mut rng = derive_rng(46, &[rep as u64]);
        let mut obs = Vec::new();
        for _ in 0..1600 {
            for t in 0..2usize {
                let order = if rng.random_range(0.0..1.0) < 0.6 {
                    vec![1, 0]
                } else {
                    vec![0, 1]
                };
                obs.push(RankingObservation::full(t, order, 1.0));
            }
        }
        let model =
            PriorModel::independent_dirichlet(2, vec![1.0, 2.0], 1.0).unwrap();
        let samples = posterior_update(
            &obs,
            &model,
            &InferenceConfig {
                method: Some(Method::Laplace),
                ..Default::default()
            },
            rep as u64,
        )
        .unwrap();
        let hits = check_elimination(&[0, 1], &samples, 0.99, EliminationMode::Pointwise).unwrap();
        if hits == vec![(0, 1)] {
            eliminated += 1;
        }
    }
    assert_eq!(eliminated, reps, "eliminated in {eliminated}/{reps}");
}

fn small_synthetic_race(
    seed: u64,
    max_rounds: usize,
) -> (Race<f64, SyntheticSource<f64>>, anyrace::race::RaceOutcome<f64>) {
    let grid = TimeGrid::uniform(0.25, 1.0, 4).unwrap();
    let truth = sample_ground_truth(4, &grid, &GroundTruthConfig::default(), seed).unwrap();
    let mut config = RaceConfig::new(grid, ModelSpec::named("independent_dirichlet"), seed);
    config.elimination = EliminationMode::Pointwise;
    config.resolution = ResolutionMode::Crossing;
    config.max_rounds = max_rounds;
    config.inference.method = Some(Method::Laplace);
    let ids: Vec<String> = (0..4).map(|i| format!("algo_{i}")).collect();
    let source = SyntheticSource::new(truth, seed);
    let mut race = Race::new(config, ids, source).unwrap();
    let outcome = race.run().unwrap();
    (race, outcome)
}

#[test]
fn early_stop_keeps_a_superset_of_the_final_pareto_set() {
    let (race, full) = small_synthetic_race(3, 60);
    assert!(full.fully_resolved);
    let total_rounds = race.state.round;
    for k in 1..total_rounds {
        let (_, truncated) = small_synthetic_race(3, k);
        for member in &full.pareto_indices {
            assert!(
                truncated.pareto_indices.contains(member),
                "round-{k} stop lost Pareto member {member}"
            );
        }
    }
}

#[test]
fn exchangeable_algorithms_resolve_as_equivalent() {
    // Same implementation under two ids: win probability is exactly 0.5,
    // so the pair must resolve inside the ROPE with both staying in the set.
    let grid = TimeGrid::uniform(50.0, 400.0, 4).unwrap();
    let mut config = RaceConfig::new(grid, ModelSpec::named("independent_dirichlet"), 77);
    config.elimination = EliminationMode::Pointwise;
    config.resolution = ResolutionMode::Strict;
    config.max_rounds = 60;
    config.batch_max = 128;
    config.inference.method = Some(Method::Laplace);
    let source: TrajectorySource<f64> = TrajectorySource::new(
        vec![
            Box::new(RandomSearch::with_id("rs_a")),
            Box::new(RandomSearch::with_id("rs_b")),
        ],
        Box::new(ToyProvider::sphere(3)),
        77,
    );
    let ids = source.algorithm_ids();
    let mut race = Race::new(config, ids, source).unwrap();
    let outcome = race.run().unwrap();
    assert!(outcome.fully_resolved, "race did not resolve");
    assert_eq!(outcome.pareto.len(), 2, "both exchangeable algorithms stay");
    let label = race.state.resolution.label(0, 1, 0);
    assert!(
        matches!(
            label,
            Some(anyrace::beliefs::Relation::Equivalent)
                | Some(anyrace::beliefs::Relation::CrossingShortcut)
        ),
        "pair resolved as {label:?}"
    );
}

#[test]
fn injected_algorithm_leaves_incumbent_inference_unchanged() {
    let grid = TimeGrid::uniform(50.0, 400.0, 4).unwrap();
    let mut config = RaceConfig::new(grid, ModelSpec::named("independent_dirichlet"), 5);
    config.elimination = EliminationMode::Pointwise;
    config.resolution = ResolutionMode::Crossing;
    config.max_rounds = 3;
    config.inference.method = Some(Method::Laplace);
    let source: TrajectorySource<f64> = TrajectorySource::new(
        vec![
            Box::new(RandomSearch::default()),
            Box::new(OnePlusOneEs::default()),
        ],
        Box::new(ToyProvider::sphere(3)),
        5,
    );
    let ids = source.algorithm_ids();
    let mut race = Race::new(config, ids, source).unwrap();
    while race.state.round < 2 && !race.state.is_complete() {
        race.round().unwrap();
    }

    // Pairwise win-probability mean for the incumbents before injection.
    let mean_win = |samples: &RatingSamples<f64>| -> f64 {
        let mut acc = 0.0;
        for d in 0..samples.draws() {
            let mut prod = 1.0;
            for t in 0..samples.timepoints() {
                let a = samples.theta(d, t, 0);
                let b = samples.theta(d, t, 1);
                prod *= a / (a + b);
            }
            acc += prod;
        }
        acc / samples.draws() as f64
    };
    let before = mean_win(race.last_samples().unwrap());

    race.source_mut()
        .push_algorithm(Box::new(RandomSearch::with_id("rs_late")));
    race.add_algorithm("rs_late".to_string()).unwrap();
    let obs = race.observations().unwrap();
    let samples = posterior_update(&obs, race.model(), &race.config.inference, 909).unwrap();
    let after = mean_win(&samples);
    assert!(
        (before - after).abs() < 0.03,
        "incumbent inference moved: {before:.4} -> {after:.4}"
    );
    // All pairs involving the newcomer start unresolved.
    for other in 0..2 {
        for t in 0..race.config.grid.len() {
            assert!(!race.state.resolution.is_resolved(2, other, t));
        }
    }
}

#[test]
fn fresh_injection_enters_with_the_prior() {
    // Adding before any sampling: the newcomer has no data, and under the
    // exchangeable prior its pairwise probabilities sit near one half.
    let grid = TimeGrid::uniform(50.0, 400.0, 3).unwrap();
    let mut config = RaceConfig::new(grid, ModelSpec::named("independent_dirichlet"), 6);
    config.inference.method = Some(Method::Laplace);
    let source: TrajectorySource<f64> = TrajectorySource::new(
        vec![
            Box::new(RandomSearch::default()),
            Box::new(OnePlusOneEs::default()),
        ],
        Box::new(ToyProvider::sphere(3)),
        6,
    );
    let ids = source.algorithm_ids();
    let mut race = Race::new(config, ids, source).unwrap();
    race.source_mut()
        .push_algorithm(Box::new(RandomSearch::with_id("rs_late")));
    race.add_algorithm("rs_late".to_string()).unwrap();
    let obs = race.observations().unwrap();
    assert!(obs.is_empty());
    let samples = posterior_update(&obs, race.model(), &race.config.inference, 7).unwrap();
    for other in 0..2usize {
        let p = anyrace::beliefs::p_dominates_pointwise(&samples, 2, other, 0);
        assert!((p - 0.5).abs() < 0.05, "newcomer vs {other}: {p}");
    }
}

#[test]
fn crashing_algorithm_ranks_worst_and_gets_eliminated() {
    struct Crasher;
    impl anyrace::trajectory::AnytimeAlgorithm for Crasher {
        fn id(&self) -> &str {
            "crasher"
        }
        fn run(
            &self,
            _instance: &dyn anyrace::trajectory::Instance,
            _budget: u64,
            _seed: u64,
            _report: &mut dyn FnMut(u64, f64),
        ) {
            panic!("synthetic failure");
        }
    }

    let grid = TimeGrid::uniform(50.0, 200.0, 3).unwrap();
    let mut config = RaceConfig::new(grid, ModelSpec::named("independent_dirichlet"), 9);
    config.elimination = EliminationMode::Pointwise;
    config.resolution = ResolutionMode::Crossing;
    config.alpha = 0.95;
    config.max_rounds = 20;
    config.inference.method = Some(Method::Laplace);
    let source: TrajectorySource<f64> = TrajectorySource::new(
        vec![Box::new(RandomSearch::default()), Box::new(Crasher)],
        Box::new(ToyProvider::sphere(2)),
        9,
    );
    let ids = source.algorithm_ids();
    let mut race = Race::new(config, ids, source).unwrap();
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {})); // silence expected panics
    let outcome = race.run();
    std::panic::set_hook(hook);
    let outcome = outcome.unwrap();
    assert_eq!(outcome.pareto, vec!["random_search".to_string()]);
}

#[test]
fn generic_core_works_in_single_precision() {
    // The scalar-generic code paths instantiated at f32.
    let h = anyrace::plmodel::helmert::<f32>(5).unwrap();
    let q = h.matrix();
    for a in 0..4 {
        let col: f32 = (0..5).map(|r| q[(r, a)]).sum();
        assert!(col.abs() < 1e-6);
    }
    let theta = Array2::<f32>::from_shape_vec((1, 3), vec![0.5, 0.3, 0.2]).unwrap();
    let ll = pl_log_likelihood(
        &[RankingObservation::full(0, vec![0, 1, 2], 1.0f32)],
        &theta.view(),
    )
    .unwrap();
    assert!((ll - 0.3f32.ln()).abs() < 1e-6);

    let grid = TimeGrid::uniform(0.1f32, 1.0, 5).unwrap();
    let truth: GroundTruth<f32> =
        sample_ground_truth(3, &grid, &GroundTruthConfig::default(), 11).unwrap();
    for row in truth.theta_star.rows() {
        let s: f32 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
}

#[test]
fn product_of_marginals_joint_obeys_product_rule() {
    // Independent draws across two timepoints with marginal 0.9 each give
    // a joint near 0.81.
    let mut rng = derive_rng(48, &[0]);
    let s = 200_000usize;
    let mut arr = Array3::<f64>::zeros((s, 2, 2));
    for d in 0..s {
        for t in 0..2 {
            let w = rng.random_range(0.0..1.0) < 0.9;
            let a = if w { 0.7 } else { 0.3 };
            arr[(d, t, 0)] = a;
            arr[(d, t, 1)] = 1.0 - a;
        }
    }
    let samples = RatingSamples::new(
        arr,
        Method::Laplace,
        anyrace::inference::JointStructure::ProductOfMarginals,
        Default::default(),
    )
    .unwrap();
    let joint = anyrace::beliefs::p_dominates_anytime(&samples, 0, 1);
    assert!((joint - 0.81).abs() < 0.005, "joint = {joint}");
}

/// Hand-built ground truth: column 0 holds the given win probability over
/// every rival at every timepoint; rivals share the remainder with a mild
/// seed-dependent tilt so their mutual relations vary.
fn single_winner_truth(n: usize, t: usize, lead_win: f64, seed: u64) -> GroundTruth<f64> {
    let grid = TimeGrid::uniform(0.1, 1.0, t).unwrap();
    let mut truth = sample_ground_truth(n, &grid, &GroundTruthConfig::default(), seed).unwrap();
    let mut rng = derive_rng(seed, &[0xbead]);
    let mut theta = Array2::<f64>::zeros((t, n));
    for ti in 0..t {
        // theta_0 / (theta_0 + theta_j) = lead_win for the strongest rival.
        let tilt: Vec<f64> = (0..n - 1)
            .map(|_| rng.random_range(0.5..1.0))
            .collect();
        let top_share = lead_win / (1.0 - lead_win);
        let rival_total: f64 = tilt.iter().sum();
        let top_rival = tilt.iter().cloned().fold(0.0, f64::max);
        let scale = 1.0 / (rival_total + top_share * top_rival / top_rival);
        let _ = scale;
        // Normalize: rivals get tilt shares; leader's rating is set so its
        // win probability versus the strongest rival equals lead_win.
        let rival_sum: f64 = tilt.iter().sum();
        let leader = top_share * top_rival;
        let z = leader + rival_sum;
        theta[(ti, 0)] = leader / z;
        for j in 0..n - 1 {
            theta[(ti, j + 1)] = tilt[j] / z;
        }
    }
    truth.theta_star = theta;
    truth.mu_star = truth.theta_star.mapv(f64::ln);
    truth
}

#[test]
fn single_dominator_truths_recover_singleton_pareto_sets() {
    // Clear single winner (65% win probability against its strongest rival
    // everywhere): the race should end with just the winner in at least
    // 90% of replications.
    let reps = 20usize;
    let mut singletons = 0usize;
    for rep in 0..reps {
        let truth = single_winner_truth(4, 5, 0.65, 500 + rep as u64);
        assert_eq!(anyrace::synth::true_pareto_set(&truth), vec![0]);
        let grid = TimeGrid::new(truth.times.clone(), anyrace::grid::Spacing::Explicit).unwrap();
        let mut config =
            RaceConfig::new(grid, ModelSpec::named("independent_dirichlet"), 500 + rep as u64);
        config.elimination = EliminationMode::Pointwise;
        config.resolution = ResolutionMode::Crossing;
        config.max_rounds = 80;
        config.batch_max = 128;
        config.inference.method = Some(Method::Laplace);
        let ids: Vec<String> = (0..4).map(|i| format!("algo_{i}")).collect();
        let source = SyntheticSource::new(truth, 500 + rep as u64);
        let mut race = Race::new(config, ids, source).unwrap();
        let outcome = race.run().unwrap();
        if outcome.pareto_indices == vec![0] {
            singletons += 1;
        }
    }
    assert!(singletons >= 18, "singleton Pareto set in {singletons}/{reps}");
}

#[test]
fn clearly_dominated_algorithms_fall_early() {
    // One far-behind algorithm should be eliminated within the first few
    // rounds in most replications.
    let reps = 10usize;
    let mut early = 0usize;
    for rep in 0..reps {
        let truth = single_winner_truth(5, 5, 0.9, 900 + rep as u64);
        let grid = TimeGrid::new(truth.times.clone(), anyrace::grid::Spacing::Explicit).unwrap();
        let mut config =
            RaceConfig::new(grid, ModelSpec::named("independent_dirichlet"), 900 + rep as u64);
        config.elimination = EliminationMode::Pointwise;
        config.resolution = ResolutionMode::Crossing;
        config.max_rounds = 40;
        config.inference.method = Some(Method::Laplace);
        let ids: Vec<String> = (0..5).map(|i| format!("algo_{i}")).collect();
        let source = SyntheticSource::new(truth, 900 + rep as u64);
        let mut race = Race::new(config, ids.clone(), source).unwrap();
        let outcome = race.run().unwrap();
        let first_elimination_round = outcome
            .rounds
            .iter()
            .find(|r| !r.eliminations.is_empty())
            .map(|r| r.round);
        if matches!(first_elimination_round, Some(r) if r <= 4) {
            early += 1;
        }
    }
    assert!(early >= 8, "early elimination in {early}/{reps} replications");
}

#[test]
fn hmc_matches_metropolis_reference_and_laplace() {
    // Small PL posterior: n=3, T=2, 50 rankings per timepoint. A long
    // random-walk Metropolis chain serves as the reference.
    let mut rng = derive_rng(55, &[1]);
    let truth = [0.5f64, 0.3, 0.2];
    let mut obs = Vec::new();
    for t in 0..2usize {
        for _ in 0..25 {
            let mut keyed: Vec<(f64, usize)> = truth
                .iter()
                .enumerate()
                .map(|(i, &v)| (v.ln() + gumbel::<f64, _>(&mut rng), i))
                .collect();
            keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            obs.push(RankingObservation::full(
                t,
                keyed.iter().map(|&(_, i)| i).collect(),
                1.0,
            ));
        }
    }
    let model = PriorModel::independent_dirichlet(3, vec![1.0, 2.0], 1.0).unwrap();
    let config_base = InferenceConfig {
        shard_timepoints: false,
        ..Default::default()
    };
    let laplace = posterior_update(
        &obs,
        &model,
        &InferenceConfig {
            method: Some(Method::Laplace),
            draws: 4000,
            ..config_base.clone()
        },
        1,
    )
    .unwrap();
    let hmc = posterior_update(
        &obs,
        &model,
        &InferenceConfig {
            method: Some(Method::Hmc),
            chains: 4,
            warmup: 500,
            draws: 1500,
            ..config_base
        },
        2,
    )
    .unwrap();

    // Random-walk Metropolis reference on the same unconstrained density.
    let posterior = anyrace::inference::Posterior::new(&model, &obs);
    let dim = posterior.dim();
    let mut x = vec![0.0f64; dim];
    let (mut lp, _) = posterior.logp_grad(&x).unwrap();
    let mut rng = derive_rng(55, &[2]);
    let step = 0.25;
    let total = 400_000usize;
    let burn = 50_000usize;
    let mut sums = vec![0.0f64; 6]; // win probs for pairs (0,1),(0,2),(1,2) at t=0,1
    let mut kept = 0usize;
    for it in 0..total {
        let proposal: Vec<f64> = x
            .iter()
            .map(|&v| v + step * anyrace::stats::std_normal::<f64, _>(&mut rng))
            .collect();
        if let Some((lp_new, _)) = posterior.try_logp_grad(&proposal) {
            if lp_new - lp > rng.random_range(0.0f64..1.0).ln() {
                x = proposal;
                lp = lp_new;
            }
        }
        if it >= burn && it % 20 == 0 {
            let theta = model.theta(&x).unwrap();
            for t in 0..2 {
                for (p, (i, j)) in [(0usize, 1usize), (0, 2), (1, 2)].into_iter().enumerate() {
                    sums[t * 3 + p] += theta[(t, i)] / (theta[(t, i)] + theta[(t, j)]);
                }
            }
            kept += 1;
        }
    }
    let reference: Vec<f64> = sums.iter().map(|s| s / kept as f64).collect();

    let mean_win = |s: &RatingSamples<f64>, t: usize, i: usize, j: usize| -> f64 {
        let mut acc = 0.0;
        for d in 0..s.draws() {
            let a = s.theta(d, t, i);
            let b = s.theta(d, t, j);
            acc += a / (a + b);
        }
        acc / s.draws() as f64
    };
    for t in 0..2 {
        for (p, (i, j)) in [(0usize, 1usize), (0, 2), (1, 2)].into_iter().enumerate() {
            let h = mean_win(&hmc, t, i, j);
            let l = mean_win(&laplace, t, i, j);
            let reference = reference[t * 3 + p];
            assert!(
                (h - reference).abs() < 0.01,
                "hmc pair ({i},{j}) t{t}: {h:.4} vs reference {reference:.4}"
            );
            assert!(
                (l - h).abs() < 0.03,
                "laplace pair ({i},{j}) t{t}: {l:.4} vs hmc {h:.4}"
            );
        }
    }
}

#[test]
fn dirichlet_unit_concentration_is_uniform_on_the_simplex() {
    // alpha = 1: marginals of a uniform simplex distribution are Beta(1, n-1).
    let model = PriorModel::independent_dirichlet(3, vec![1.0], 1.0).unwrap();
    let mut rng = derive_rng(56, &[0]);
    let draws = 40_000usize;
    let mut mean = [0.0f64; 3];
    let mut below_half = 0usize;
    for _ in 0..draws {
        let params = model.sample_params(&mut rng).unwrap();
        let theta = model.theta(&params).unwrap();
        for i in 0..3 {
            mean[i] += theta[(0, i)];
        }
        if theta[(0, 0)] < 0.5 {
            below_half += 1;
        }
    }
    for m in mean {
        assert!((m / draws as f64 - 1.0 / 3.0).abs() < 0.01);
    }
    // P(theta_0 < 0.5) under Beta(1,2) is 1 - (1-0.5)^2 = 0.75.
    let emp = below_half as f64 / draws as f64;
    assert!((emp - 0.75).abs() < 0.01, "P(theta<0.5) = {emp}");
}

#[test]
fn simulated_rankings_prefer_the_generating_ratings() {
    // Average log-likelihood at the true ratings beats any single
    // perturbation of them.
    let grid = TimeGrid::uniform(0.1, 1.0, 6).unwrap();
    let truth = sample_ground_truth(4, &grid, &GroundTruthConfig::default(), 21).unwrap();
    let mut rng = derive_rng(57, &[0]);
    let obs = anyrace::synth::simulate_rankings(&truth, 4000, &mut rng);
    let at_truth = pl_log_likelihood(&obs, &truth.theta_star.view()).unwrap();
    for k in 0..10 {
        let mut rng = derive_rng(57, &[1 + k]);
        let mut perturbed = truth.theta_star.clone();
        for ti in 0..perturbed.nrows() {
            let mut row: Vec<f64> = (0..perturbed.ncols())
                .map(|i| perturbed[(ti, i)] * f64::exp(rng.random_range(-0.25..0.25)))
                .collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            for i in 0..perturbed.ncols() {
                perturbed[(ti, i)] = row[i];
            }
        }
        let at_perturbed = pl_log_likelihood(&obs, &perturbed.view()).unwrap();
        assert!(
            at_truth > at_perturbed,
            "perturbation {k} scored higher: {at_perturbed} vs {at_truth}"
        );
    }
}
