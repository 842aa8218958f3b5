//! Property tests for the small algebraic invariants.

use anyrace::priors::stick::{simplex_to_stick, stick_to_simplex};
use anyrace::ranking::expand_ties;
use anyrace::stats::{quantile, trapezoid_weights};
use proptest::prelude::*;
use rand::SeedableRng;

proptest! {
    #[test]
    fn tie_expansion_weights_sum_to_one(
        sizes in proptest::collection::vec(1usize..4, 1..4),
        seed in any::<u64>(),
    ) {
        let mut next = 0usize;
        let groups: Vec<Vec<usize>> = sizes
            .iter()
            .map(|&k| {
                let g: Vec<usize> = (next..next + k).collect();
                next += k;
                g
            })
            .collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let expanded: Vec<(Vec<usize>, f64)> = expand_ties(&groups, 24, 24, &mut rng).unwrap();
        let total: f64 = expanded.iter().map(|(_, w)| w).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for (ordering, _) in &expanded {
            prop_assert_eq!(ordering.len(), next);
            let mut sorted = ordering.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..next).collect::<Vec<_>>());
        }
    }

    #[test]
    fn stick_breaking_round_trips(
        y in proptest::collection::vec(-6.0f64..6.0, 1..8),
    ) {
        let n = y.len() + 1;
        let mut theta = vec![0.0f64; n];
        stick_to_simplex(&y, &mut theta);
        let sum: f64 = theta.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-10);
        prop_assert!(theta.iter().all(|&v| v > 0.0));
        let mut back = vec![0.0f64; n - 1];
        simplex_to_stick(&theta, &mut back);
        for (a, b) in y.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn quantiles_lie_within_the_sample_range(
        mut xs in proptest::collection::vec(-1e3f64..1e3, 1..40),
        gamma in 0.0f64..=1.0,
    ) {
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = quantile(&xs, gamma);
        prop_assert!(q >= xs[0] && q <= xs[xs.len() - 1]);
    }

    #[test]
    fn trapezoid_weights_integrate_constants_exactly(
        mut pts in proptest::collection::vec(0.0f64..1e3, 2..20),
    ) {
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        prop_assume!(pts.len() >= 2);
        let w = trapezoid_weights(&pts);
        let total: f64 = w.iter().sum();
        let span = pts[pts.len() - 1] - pts[0];
        prop_assert!((total - span).abs() < 1e-9 * span.max(1.0));
    }
}
