//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use netfuse::fusion::{total_loss, CompiledObjective, LossWeights};
use netfuse::{FusionWeights, MultiplexSeries, MultiplexSnapshot, NodeRegistry, TimeLabel, WeightedGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_series(rng: &mut ChaCha8Rng, n: usize, h: usize, steps: usize) -> MultiplexSeries {
    let reg = Arc::new(NodeRegistry::new((0..n).map(|i| format!("n{i}")).collect()).unwrap());
    let mut snaps = Vec::new();
    for t in 0..steps {
        let mut raw = Vec::new();
        let mut add = Vec::new();
        for _ in 0..h {
            let mut r = WeightedGraph::new(reg.clone());
            let mut a = WeightedGraph::new(reg.clone());
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random::<f64>() < 0.45 {
                        r.set_weight(i, j, rng.random_range(0.5..3.0)).unwrap();
                        if rng.random::<f64>() < 0.4 {
                            a.set_weight(i, j, rng.random_range(0.5..3.0)).unwrap();
                        }
                    }
                }
            }
            raw.push(r);
            add.push(a);
        }
        snaps.push(MultiplexSnapshot::new(TimeLabel::Int(t as i64), raw, add).unwrap());
    }
    MultiplexSeries::new(snaps).unwrap()
}

pub fn random_weights(rng: &mut ChaCha8Rng, h: usize) -> FusionWeights {
    let tail: Vec<f64> = (1..h).map(|_| rng.random_range(0.2..2.0)).collect();
    FusionWeights::from_tail(&tail, rng.random_range(0.1..0.9)).unwrap()
}

pub fn finite_difference(
    series: &MultiplexSeries,
    w: &FusionWeights,
    lw: &LossWeights,
    subset: &[usize],
) -> Vec<f64> {
    let h = w.layer_count();
    let step = 1e-5;
    let mut grad = Vec::new();
    for k in 0..h {
        let shifted = |delta: f64| {
            let mut tail = w.increments()[1..].to_vec();
            let mut a = w.w_add();
            if k < h - 1 {
                tail[k] += delta;
            } else {
                a += delta;
            }
            total_loss(series, &FusionWeights::from_tail(&tail, a).unwrap(), lw, subset).unwrap()
        };
        grad.push((shifted(step) - shifted(-step)) / (2.0 * step));
    }
    grad
}

pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Worst relative gradient error over 20 random small instances.
pub fn gradient_check(budget: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(3..=10);
        let h = rng.random_range(1..=3);
        let steps = rng.random_range(2..=4);
        let series = random_series(&mut rng, n, h, steps);
        let w = random_weights(&mut rng, h);
        let lw = LossWeights {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: rng.random_range(0.0..0.01),
        };
        let subset: Vec<usize> = (0..steps - 1).collect();
        let obj = CompiledObjective::with_budget(&series, budget).unwrap();
        let analytic = obj.evaluate_with_grad(&w, &lw, &subset).grad;
        let numeric = finite_difference(&series, &w, &lw, &subset);
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    worst
}
