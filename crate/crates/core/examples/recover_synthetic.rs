//! Fits the synthetic benchmark for one ground-truth row and prints the
//! recovered weights.
//!
//! cargo run --release -p netfuse --example recover_synthetic -- 0,1,0,1 0.3 0.001

use std::time::Instant;

use netfuse::fusion::{fit, select_best, FitConfig, LossWeights};
use netfuse::synth::{generate, SynthConfig};
use netfuse::FusionWeights;

fn main() -> netfuse::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let tail: Vec<f64> = args
        .first()
        .map(|s| s.split(',').map(|x| x.parse().expect("number")).collect())
        .unwrap_or_else(|| vec![0.0, 1.0, 0.0, 1.0]);
    let w_add: f64 = args.get(1).map(|s| s.parse().expect("number")).unwrap_or(0.0);
    let alpha3: f64 = args.get(2).map(|s| s.parse().expect("number")).unwrap_or(0.0);
    let seed: u64 = args.get(3).map(|s| s.parse().expect("number")).unwrap_or(0);

    let gt = FusionWeights::from_tail(&tail, w_add)?;
    let (series, gt) = generate(&SynthConfig::benchmark(gt, seed))?;
    let config = FitConfig {
        loss_weights: LossWeights {
            alpha3,
            ..LossWeights::default()
        },
        seeds: vec![0],
        keep_trajectories: false,
        ..FitConfig::default()
    };
    let start = Instant::now();
    let results = fit(&series, &config)?;
    for r in &results {
        let w = r.unthresholded.as_ref().unwrap();
        println!(
            "{:<14} epochs={:<5} best={:<5} test={:.3e} w={:?} w_add={:.4}",
            r.init_label,
            r.epochs_run,
            r.selected_epoch,
            r.test_loss().unwrap_or(f64::NAN),
            w.increments()[1..].iter().map(|x| (x * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            w.w_add()
        );
    }
    let best = select_best(&results)?;
    let w = best.weights.as_ref().unwrap();
    println!("ground truth {:?} w_add={}", &gt.increments()[1..], gt.w_add());
    println!("selected     {:?} w_add={:.4}", &w.increments()[1..], w.w_add());
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
