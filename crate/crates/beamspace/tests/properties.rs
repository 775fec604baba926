use proptest::prelude::*;

use beamspace::capacity::{eadof, water_fill};
use nalgebra::DMatrix;
use num_complex::Complex64;

proptest! {
    #[test]
    fn water_fill_respects_budget(
        gains in proptest::collection::vec(0.0f64..10.0, 1..8),
        budget in 0.1f64..50.0,
    ) {
        let alloc = water_fill(&gains, budget, 1.0);
        let used: f64 = alloc.iter().sum();
        prop_assert!(used <= budget * (1.0 + 1e-12) + 1e-12);
        for (&p, &g) in alloc.iter().zip(&gains) {
            prop_assert!(p >= 0.0);
            if g <= 0.0 {
                prop_assert_eq!(p, 0.0);
            }
        }
        // The full budget is spent whenever any gain is positive.
        if gains.iter().any(|&g| g > 0.0) {
            prop_assert!((used - budget).abs() < 1e-9 * budget.max(1.0));
        }
    }

    #[test]
    fn eadof_monotone_in_epsilon(
        lambda in proptest::collection::vec(1e-3f64..10.0, 1..12),
        eps_a in 1e-3f64..100.0,
        eps_b in 1e-3f64..100.0,
    ) {
        let mut sorted = lambda.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let (lo, hi) = if eps_a <= eps_b { (eps_a, eps_b) } else { (eps_b, eps_a) };
        prop_assert!(eadof(&sorted, lo) <= eadof(&sorted, hi));
    }

    #[test]
    fn correlation_magnitudes_phase_invariant(
        seed in 0u64..500,
        phase in 0.0f64..std::f64::consts::TAU,
    ) {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = DMatrix::from_fn(12, 3, |_, _| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let base = beamspace::network::correlation_objective(&e);
        let mut rotated = e.clone();
        let factor = Complex64::new(0.0, phase).exp();
        for r in 0..rotated.nrows() {
            rotated[(r, 0)] *= factor;
        }
        let after = beamspace::network::correlation_objective(&rotated);
        prop_assert!((base - after).abs() < 1e-10);
    }
}
