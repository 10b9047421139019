//! Analytic gradient of the compiled objective against central finite
//! differences of the reference loss path.

mod common;

use common::{finite_difference, gradient_check, max_relative_error, random_series, random_weights};
use netfuse::fusion::{CompiledObjective, LossWeights};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn gram_mode_gradient_matches_finite_differences() {
    let err = gradient_check(usize::MAX);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn direct_mode_gradient_matches_finite_differences() {
    let err = gradient_check(0);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn compiled_terms_match_reference_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for budget in [0, usize::MAX] {
        for _ in 0..5 {
            let series = random_series(&mut rng, 8, 3, 4);
            let w = random_weights(&mut rng, 3);
            let obj = CompiledObjective::with_budget(&series, budget).unwrap();
            let (terms, _) = obj.evaluate(&w);
            let reference = netfuse::fusion::pair_terms(&series, &w).unwrap();
            for (a, b) in terms.sim.iter().zip(&reference.sim) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
            for (a, b) in terms.deg.iter().zip(&reference.deg) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn gradient_on_subset_only_counts_subset() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let series = random_series(&mut rng, 7, 2, 4);
    let w = random_weights(&mut rng, 2);
    let lw = LossWeights::default();
    let obj = CompiledObjective::new(&series).unwrap();
    let analytic = obj.evaluate_with_grad(&w, &lw, &[1]).grad;
    let numeric = finite_difference(&series, &w, &lw, &[1]);
    assert!(max_relative_error(&analytic, &numeric) < 1e-4);
}

#[test]
fn batched_evaluation_matches_single_calls() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for budget in [0, usize::MAX] {
        let series = random_series(&mut rng, 9, 3, 5);
        let batch: Vec<_> = (0..6).map(|_| random_weights(&mut rng, 3)).collect();
        let lw = LossWeights::default();
        let subset = [0, 2, 3];
        let obj = CompiledObjective::with_budget(&series, budget).unwrap();
        let together = obj.evaluate_batch(&batch, &lw, &subset);
        for (w, t) in batch.iter().zip(&together) {
            let alone = obj.evaluate_with_grad(w, &lw, &subset);
            assert!(max_relative_error(&t.grad, &alone.grad) < 1e-10);
            for (a, b) in t.terms.sim.iter().zip(&alone.terms.sim) {
                assert!((a - b).abs() < 1e-10);
            }
            assert_eq!(t.reg, alone.reg);
        }
    }
}
