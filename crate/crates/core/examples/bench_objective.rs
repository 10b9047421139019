//! Times one gradient evaluation of the compiled objective on the synthetic
//! benchmark.

use std::time::Instant;

use netfuse::fusion::{CompiledObjective, LossWeights};
use netfuse::synth::{generate, SynthConfig};
use netfuse::FusionWeights;

fn main() -> netfuse::Result<()> {
    let gt = FusionWeights::from_tail(&[0.0, 1.0, 0.0, 1.0], 0.3)?;
    let (series, _) = generate(&SynthConfig::benchmark(gt, 0))?;
    let start = Instant::now();
    let obj = CompiledObjective::with_budget(&series, std::env::args().nth(1).map_or(usize::MAX, |s| s.parse().unwrap()))?;
    println!("compile {:.3}s gram={}", start.elapsed().as_secs_f64(), obj.uses_gram());
    let w = FusionWeights::from_tail(&[0.5, 0.5, 0.5, 0.5], 0.5)?;
    let subset: Vec<usize> = (0..8).collect();
    let lw = LossWeights::default();
    let reps = 200;
    let start = Instant::now();
    let mut acc = 0.0;
    for _ in 0..reps {
        acc += obj.evaluate_with_grad(&w, &lw, &subset).grad[0];
    }
    println!("{:.3} ms/eval ({acc:.3})", start.elapsed().as_secs_f64() * 1e3 / reps as f64);
    let batch: Vec<FusionWeights> = (0..11)
        .map(|k| FusionWeights::from_tail(&[0.1 * k as f64 + 0.1; 4], 0.5))
        .collect::<netfuse::Result<_>>()?;
    let start = Instant::now();
    for _ in 0..reps / 4 {
        acc += obj.evaluate_batch(&batch, &lw, &subset)[0].grad[0];
    }
    println!("{:.3} ms/batch of 11 ({acc:.3})", start.elapsed().as_secs_f64() * 1e3 / (reps / 4) as f64);
    let start = Instant::now();
    for _ in 0..reps {
        acc += obj.evaluate(&w).0.sim[0];
    }
    println!("{:.3} ms/forward ({acc:.3})", start.elapsed().as_secs_f64() * 1e3 / reps as f64);
    Ok(())
}
