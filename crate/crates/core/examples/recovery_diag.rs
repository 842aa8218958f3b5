use anyrace::beliefs::{EliminationMode, ResolutionMode};
use anyrace::grid::TimeGrid;
use anyrace::inference::{InferenceConfig, Method};
use anyrace::priors::ModelSpec;
use anyrace::race::{Race, RaceConfig, SyntheticSource};
use anyrace::synth::{sample_ground_truth, true_pareto_set, GroundTruthConfig};
use std::time::Instant;

fn contested(seed: u64, grid: &TimeGrid<f64>) -> (u64, anyrace::synth::GroundTruth<f64>) {
    let mut s = seed;
    loop {
        let truth = sample_ground_truth(5, grid, &GroundTruthConfig::default(), s).unwrap();
        let pareto = true_pareto_set(&truth);
        let t = truth.timepoints();
        let ok = (0..truth.n()).all(|x| {
            pareto.contains(&x)
                || pareto.iter().any(|&m| (0..t).any(|ti| truth.win_probability(x, m, ti) >= 0.2))
        });
        if ok {
            return (s, truth);
        }
        s += 10_000;
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lo: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0);
    let hi: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(20);
    let grid = TimeGrid::uniform(0.05, 1.0, 20).unwrap();
    for base in lo..hi {
        let (seed, truth) = contested(base, &grid);
        let true_set = true_pareto_set(&truth);
        let mut spec = ModelSpec::named("gp_hsgp");
        spec.ell_scale = 2.0;
        spec.basis_size = 32;
        let mut config = RaceConfig::new(grid.clone(), spec, seed);
        config.elimination = EliminationMode::Joint;
        config.resolution = ResolutionMode::Crossing;
        config.max_rounds = 200;
        config.inference = InferenceConfig {
            method: Some(Method::Hmc),
            chains: 2,
            warmup: 400,
            draws: 600,
            ..Default::default()
        };
        let ids: Vec<String> = (0..5).map(|i| format!("a{i}")).collect();
        let source = SyntheticSource::new(truth, seed);
        let mut race = Race::new(config, ids, source).unwrap();
        let t0 = Instant::now();
        let outcome = race.run().unwrap();
        let truth = race.source().truth();
        let a = true_set.iter().all(|m| outcome.pareto_indices.contains(m));
        let t_len = truth.timepoints();
        let b = outcome.pareto_indices.iter().all(|&x| {
            true_set.contains(&x)
                || true_set.iter().any(|&m| {
                    (0..t_len)
                        .map(|t| truth.win_probability(x, m, t))
                        .fold(f64::NEG_INFINITY, f64::max)
                        >= 0.45
                })
        });
        println!(
            "base {base:>2} seed {seed:>6}: a={a} b={b} resolved={} rounds={:>3} inst={:>5} cost={:>7.0}/{:<7.0} pareto={:?} true={:?} ({:?})",
            outcome.fully_resolved,
            race.state.round,
            race.state.instance_log.len(),
            race.state.total_cost,
            5.0 * race.state.instance_log.len() as f64 * 1.0,
            outcome.pareto_indices,
            true_set,
            t0.elapsed()
        );
    }
}
