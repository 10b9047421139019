//! Fitting fusion weights: Adam on the free parameters with early stopping on
//! the validation loss, run from a grid of initializations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FusionWeights, MultiplexSeries};

use super::loss::{loss_reg, pair_terms, LossWeights};
use super::objective::CompiledObjective;
use super::reparam::{to_constrained, to_free, FreeParams};

/// Consecutive-pair indices (zero based; index `p` is the pair of steps
/// `p`, `p + 1`) assigned to training, validation and test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    /// Splits `T` time steps into contiguous blocks of `train`, `val` and
    /// `test` steps. A pair belongs to the block holding its first step, so
    /// the test block yields one pair fewer than it has steps.
    pub fn from_step_counts(train: usize, val: usize, test: usize, steps: usize) -> Result<Self> {
        if train + val + test != steps {
            return Err(Error::invalid(format!(
                "split {train}:{val}:{test} does not cover {steps} time steps"
            )));
        }
        if train == 0 || val == 0 || test < 2 {
            return Err(Error::invalid(format!(
                "split {train}:{val}:{test} leaves an empty block of pairs"
            )));
        }
        Ok(Self {
            train: (0..train).collect(),
            val: (train..train + val).collect(),
            test: (train + val..steps - 1).collect(),
        })
    }

    /// Proportional 8:3:3 split of `steps` time steps.
    pub fn default_for(steps: usize) -> Result<Self> {
        if steps < 4 {
            return Err(Error::invalid(format!(
                "need at least 4 time steps for train/validation/test, got {steps}"
            )));
        }
        let mut val = ((steps as f64) * 3.0 / 14.0).round().max(1.0) as usize;
        let mut test = ((steps as f64) * 3.0 / 14.0).round().max(2.0) as usize;
        while val + test + 1 > steps {
            if val > 1 {
                val -= 1;
            } else {
                test -= 1;
            }
        }
        Self::from_step_counts(steps - val - test, val, test, steps)
    }

    pub fn validate(&self, pairs: usize) -> Result<()> {
        for (name, set) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if set.is_empty() {
                return Err(Error::invalid(format!("{name} split is empty")));
            }
            if let Some(&p) = set.iter().find(|&&p| p >= pairs) {
                return Err(Error::invalid(format!(
                    "{name} split references pair {p} but the series has {pairs} pairs"
                )));
            }
        }
        Ok(())
    }
}

/// Starting point for one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Initialization {
    pub id: usize,
    pub label: String,
    pub tail: Vec<f64>,
    pub w_add: f64,
}

impl Initialization {
    pub fn weights(&self) -> Result<FusionWeights> {
        FusionWeights::from_tail(&self.tail, self.w_add.min(1.0))
    }

    pub fn free_params(&self) -> Result<FreeParams> {
        Ok(to_free(&self.weights()?))
    }
}

pub const UNIFORM_GRID: [f64; 6] = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0];

/// Uniform starts over [`UNIFORM_GRID`] (with `w_add` capped at 1) followed by
/// one start per free parameter set to 1 with the others at 0.1; `6 + H`
/// starts in total.
pub fn init_grid(layers: usize) -> Vec<Initialization> {
    assert!(layers >= 1, "at least one layer");
    let free = layers - 1;
    let mut out = Vec::with_capacity(6 + layers);
    for v in UNIFORM_GRID {
        out.push(Initialization {
            id: out.len(),
            label: format!("uniform-{v}"),
            tail: vec![v; free],
            w_add: v.min(1.0),
        });
    }
    for slot in 0..layers {
        let mut tail = vec![0.1; free];
        let mut w_add = 0.1;
        let label = if slot < free {
            tail[slot] = 1.0;
            format!("onehot-w{}", slot + 2)
        } else {
            w_add = 1.0;
            "onehot-w_add".to_string()
        };
        out.push(Initialization {
            id: out.len(),
            label,
            tail,
            w_add,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub loss_weights: LossWeights,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub tiny_threshold: f64,
    pub seeds: Vec<u64>,
    /// `None` means the proportional 8:3:3 split.
    pub split: Option<SplitSpec>,
    /// `None` means [`init_grid`].
    pub initializations: Option<Vec<Initialization>>,
    /// Keep per-epoch loss trajectories in the results.
    pub keep_trajectories: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            loss_weights: LossWeights::default(),
            learning_rate: 0.1,
            max_epochs: 5000,
            patience: 3000,
            tiny_threshold: 0.05,
            seeds: vec![0, 1, 2],
            split: None,
            initializations: None,
            keep_trajectories: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss_weights.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be positive"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::invalid("patience cannot exceed max_epochs"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(lr: f64, dim: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub train: Vec<f64>,
    pub val: Vec<f64>,
    pub test: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitLosses {
    pub train: f64,
    pub val: f64,
    /// Always evaluated with `alpha3 = 0`.
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub run_id: usize,
    pub init_id: usize,
    pub init_label: String,
    pub seed: u64,
    pub status: RunStatus,
    /// Best-validation weights after zeroing tiny increments.
    pub weights: Option<FusionWeights>,
    /// Best-validation weights before thresholding.
    pub unthresholded: Option<FusionWeights>,
    pub selected_epoch: usize,
    pub epochs_run: usize,
    pub losses: Option<SplitLosses>,
    pub trajectory: Trajectory,
}

impl FitResult {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    pub fn test_loss(&self) -> Option<f64> {
        self.losses.as_ref().map(|l| l.test)
    }
}

struct RunOutcome {
    status: RunStatus,
    best: Option<FusionWeights>,
    selected_epoch: usize,
    epochs_run: usize,
    trajectory: Trajectory,
}

/// Optimizer state of one initialization.
struct Runner {
    theta: Vec<f64>,
    adam: Adam,
    best: Option<(f64, Vec<f64>, usize)>,
    since_best: usize,
    trajectory: Trajectory,
    epochs_run: usize,
    failure: Option<String>,
    done: bool,
}

impl Runner {
    fn new(start: FreeParams, lr: f64) -> Self {
        let theta = start.to_vec();
        let dim = theta.len();
        Self {
            theta,
            adam: Adam::new(lr, dim),
            best: None,
            since_best: 0,
            trajectory: Trajectory::default(),
            epochs_run: 0,
            failure: None,
            done: false,
        }
    }

    fn fail(&mut self, reason: String) {
        self.failure = Some(reason);
        self.done = true;
    }

    fn finish(self) -> RunOutcome {
        if let Some(reason) = self.failure {
            return failed(reason, self.trajectory, self.epochs_run);
        }
        let (_, theta_best, epoch_best) = self.best.expect("at least one epoch ran");
        match to_constrained(&FreeParams::from_slice(&theta_best)) {
            Ok(w) => RunOutcome {
                status: RunStatus::Ok,
                best: Some(w),
                selected_epoch: epoch_best,
                epochs_run: self.epochs_run,
                trajectory: self.trajectory,
            },
            Err(e) => failed(e.to_string(), self.trajectory, self.epochs_run),
        }
    }
}

/// Runs Adam from every start in lockstep so that each epoch evaluates the
/// whole batch in one pass over the compiled objective. Runs do not interact;
/// batching only changes floating-point summation order.
fn optimize_all(
    objective: &CompiledObjective,
    starts: Vec<FreeParams>,
    config: &FitConfig,
    split: &SplitSpec,
) -> Vec<RunOutcome> {
    let lw = config.loss_weights;
    let lw_test = lw.without_reg();
    let mut runners: Vec<Runner> = starts
        .into_iter()
        .map(|s| Runner::new(s, config.learning_rate))
        .collect();

    for epoch in 0..config.max_epochs {
        let mut active = Vec::new();
        let mut batch = Vec::new();
        for (k, r) in runners.iter_mut().enumerate() {
            if r.done {
                continue;
            }
            match to_constrained(&FreeParams::from_slice(&r.theta)) {
                Ok(w) => {
                    active.push(k);
                    batch.push(w);
                }
                Err(e) => r.fail(format!("epoch {epoch}: {e}")),
            }
        }
        if active.is_empty() {
            break;
        }
        let evals = objective.evaluate_batch(&batch, &lw, &split.train);
        for (k, eval) in active.into_iter().zip(evals) {
            let r = &mut runners[k];
            let losses = (
                eval.terms.combine(&lw, eval.reg, &split.train),
                eval.terms.combine(&lw, eval.reg, &split.val),
                eval.terms.combine(&lw_test, eval.reg, &split.test),
            );
            let (train, val, test) = match losses {
                (Ok(a), Ok(b), Ok(c)) => (a, b, c),
                _ => {
                    r.fail("empty split".into());
                    continue;
                }
            };
            if !(train.is_finite() && val.is_finite() && test.is_finite())
                || eval.grad.iter().any(|g| !g.is_finite())
            {
                r.fail(format!("non-finite loss at epoch {epoch}"));
                continue;
            }
            if config.keep_trajectories {
                r.trajectory.train.push(train);
                r.trajectory.val.push(val);
                r.trajectory.test.push(test);
            }
            r.epochs_run = epoch + 1;

            match &r.best {
                Some((b, _, _)) if val >= *b => {
                    r.since_best += 1;
                    if r.since_best >= config.patience {
                        r.done = true;
                        continue;
                    }
                }
                _ => {
                    r.best = Some((val, r.theta.clone(), epoch));
                    r.since_best = 0;
                }
            }

            let jac = FreeParams::from_slice(&r.theta).jacobian_diag();
            let grad: Vec<f64> = eval.grad.iter().zip(&jac).map(|(g, j)| g * j).collect();
            r.adam.step(&mut r.theta, &grad);
        }
    }
    runners.into_iter().map(Runner::finish).collect()
}

fn failed(reason: String, trajectory: Trajectory, epochs_run: usize) -> RunOutcome {
    RunOutcome {
        status: RunStatus::Failed(reason),
        best: None,
        selected_epoch: 0,
        epochs_run,
        trajectory,
    }
}

/// Zeroes increments below `threshold`; `w_1` is untouched.
pub fn zero_tiny(weights: &FusionWeights, threshold: f64) -> Result<FusionWeights> {
    let mut w = weights.increments().to_vec();
    for x in w.iter_mut().skip(1) {
        if *x < threshold {
            *x = 0.0;
        }
    }
    FusionWeights::new(w, weights.w_add())
}

/// Losses of `weights` on each split, evaluated on the fused graphs.
pub fn split_losses(
    series: &MultiplexSeries,
    weights: &FusionWeights,
    lw: &LossWeights,
    split: &SplitSpec,
) -> Result<SplitLosses> {
    let terms = pair_terms(series, weights)?;
    let reg = loss_reg(weights);
    Ok(SplitLosses {
        train: terms.combine(lw, reg, &split.train)?,
        val: terms.combine(lw, reg, &split.val)?,
        test: terms.combine(&lw.without_reg(), reg, &split.test)?,
    })
}

/// Runs every (initialization, seed) combination.
///
/// Full-batch Adam consumes no randomness, so all seeds of one
/// initialization share a trajectory; it is computed once and reported under
/// each seed.
pub fn fit(series: &MultiplexSeries, config: &FitConfig) -> Result<Vec<FitResult>> {
    config.validate()?;
    let h = series.layer_count();
    let split = match &config.split {
        Some(s) => s.clone(),
        None => SplitSpec::default_for(series.len())?,
    };
    split.validate(series.len() - 1)?;
    let inits = config
        .initializations
        .clone()
        .unwrap_or_else(|| init_grid(h));
    for init in &inits {
        if init.tail.len() + 1 != h {
            return Err(Error::Dimension(format!(
                "initialization '{}' has {} free increments, expected {}",
                init.label,
                init.tail.len(),
                h - 1
            )));
        }
        init.weights()?;
    }
    let objective = CompiledObjective::new(series)?;

    let starts = inits
        .iter()
        .map(|init| init.free_params())
        .collect::<Result<Vec<_>>>()?;
    let outcomes: Vec<(usize, RunOutcome, Option<SplitLosses>, Option<FusionWeights>)> =
        optimize_all(&objective, starts, config, &split)
            .into_par_iter()
            .enumerate()
            .map(|(pos, mut outcome)| {
                let mut losses = None;
                let mut thresholded = None;
                if let Some(best) = &outcome.best {
                    let post = zero_tiny(best, config.tiny_threshold).and_then(|w| {
                        split_losses(series, &w, &config.loss_weights, &split).map(|l| (w, l))
                    });
                    match post {
                        Ok((w, l)) if l.train.is_finite() && l.val.is_finite() && l.test.is_finite() => {
                            thresholded = Some(w);
                            losses = Some(l);
                        }
                        Ok(_) => outcome.status = RunStatus::Failed("non-finite final loss".into()),
                        Err(e) => outcome.status = RunStatus::Failed(e.to_string()),
                    }
                }
                (pos, outcome, losses, thresholded)
            })
            .collect();

    let mut results = Vec::with_capacity(inits.len() * config.seeds.len());
    for (pos, outcome, losses, thresholded) in outcomes {
        let init = &inits[pos];
        for &seed in &config.seeds {
            results.push(FitResult {
                run_id: results.len(),
                init_id: init.id,
                init_label: init.label.clone(),
                seed,
                status: outcome.status.clone(),
                weights: thresholded.clone(),
                unthresholded: outcome.best.clone(),
                selected_epoch: outcome.selected_epoch,
                epochs_run: outcome.epochs_run,
                losses: losses.clone(),
                trajectory: outcome.trajectory.clone(),
            });
        }
    }
    Ok(results)
}

/// The successful run with the lowest test loss; ties go to the lower
/// validation loss, then the lower initialization id, then the lower seed.
pub fn select_best(results: &[FitResult]) -> Result<&FitResult> {
    results
        .iter()
        .filter(|r| r.is_ok() && r.losses.is_some())
        .min_by(|a, b| {
            let (la, lb) = (a.losses.as_ref().unwrap(), b.losses.as_ref().unwrap());
            la.test
                .total_cmp(&lb.test)
                .then(la.val.total_cmp(&lb.val))
                .then(a.init_id.cmp(&b.init_id))
                .then(a.seed.cmp(&b.seed))
        })
        .ok_or_else(|| Error::Optimization("every fitting run failed".into()))
}
