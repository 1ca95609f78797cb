use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use stereocal::evaluation::{fcp, LabeledScores};

/// Tolerance of the histogram estimator at these sample sizes.
const TOL: f64 = 0.02;

fn gaussian(n: usize, mean: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(mean, 1.0).unwrap();
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

fn overlap(c: &[f64], w: &[f64]) -> f64 {
    fcp(&LabeledScores { correct: c.to_vec(), wrong: w.to_vec() }).unwrap()
}

#[test]
fn overlap_shrinks_as_distributions_separate() {
    for seed in 0..5 {
        let c = gaussian(10_000, 0.0, seed);
        let values: Vec<f64> = [0.0, 1.0, 2.0, 4.0]
            .iter()
            .map(|&s| overlap(&c, &gaussian(10_000, s, seed + 100)))
            .collect();
        assert!(values[0] > 0.9, "{values:?}");
        for w in values.windows(2) {
            assert!(w[1] <= w[0] + 0.01, "{values:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn symmetric_in_its_arguments(
        c in proptest::collection::vec(-10.0..10.0f64, 1..300),
        w in proptest::collection::vec(-10.0..10.0f64, 1..300),
    ) {
        prop_assert!((overlap(&c, &w) - overlap(&w, &c)).abs() < 1e-12);
    }

    #[test]
    fn bounded_by_zero_and_one(
        c in proptest::collection::vec(-10.0..10.0f64, 1..300),
        w in proptest::collection::vec(-10.0..10.0f64, 1..300),
    ) {
        let f = overlap(&c, &w);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&f), "{}", f);
    }

    #[test]
    fn invariant_under_monotone_transforms(shift in 0.0..4.0f64, seed in 0u64..1000) {
        let c = gaussian(10_000, 0.0, seed);
        let w = gaussian(10_000, shift, seed + 1);
        let base = overlap(&c, &w);
        let transforms: [fn(f64) -> f64; 3] = [|x| 3.0 * x - 7.0, |x| (x / 4.0).exp(), |x| x.powi(3) + x];
        for t in transforms {
            let tc: Vec<f64> = c.iter().map(|&x| t(x)).collect();
            let tw: Vec<f64> = w.iter().map(|&x| t(x)).collect();
            let f = overlap(&tc, &tw);
            prop_assert!((f - base).abs() < TOL, "{} vs {}", f, base);
        }
    }
}
