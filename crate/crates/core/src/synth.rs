//! Synthetic benchmark with known fusion weights.
//!
//! Step 1 draws Bernoulli raw layers and ancillary sub-layers; the fused
//! graph of step 1 under the ground-truth weights is then held fixed, and
//! every later step redistributes its edges over the layers at random,
//! dividing each edge weight by the cumulative weight of its layer and
//! splitting it into raw and ancillary parts.
//!
//! Every step draws from its own ChaCha8 stream (`stream = t`) of the
//! configured seed, so steps can be generated independently and the series
//! is bit-identical for a given seed on every platform.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    fuse, FusionWeights, MultiplexSeries, MultiplexSnapshot, NodeRegistry, TimeLabel,
    WeightedGraph,
};

pub const DEFAULT_EPSILON: f64 = 1e-6;

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

/// On-disk form of [`SynthConfig`] (TOML).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfigFile {
    pub n: usize,
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(rename = "H")]
    pub layers: usize,
    pub p_h: Vec<f64>,
    pub p_add: f64,
    /// Either all `H` increments (with `w[0] = 1`) or only `w_2..w_H`.
    pub w: Vec<f64>,
    pub w_add: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub steps: usize,
    pub p_h: Vec<f64>,
    pub p_add: f64,
    pub gt_weights: FusionWeights,
    pub epsilon: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Benchmark defaults: 100 nodes, 14 steps, 5 layers, all edge
    /// probabilities 0.1.
    pub fn benchmark(gt_weights: FusionWeights, seed: u64) -> Self {
        let h = gt_weights.layer_count();
        Self {
            n: 100,
            steps: 14,
            p_h: vec![0.1; h],
            p_add: 0.1,
            gt_weights,
            epsilon: DEFAULT_EPSILON,
            seed,
        }
    }

    pub fn layers(&self) -> usize {
        self.gt_weights.layer_count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("n must be at least 2"));
        }
        if self.steps < 2 {
            return Err(Error::invalid("T must be at least 2"));
        }
        if self.p_h.len() != self.layers() {
            return Err(Error::Dimension(format!(
                "{} layer probabilities for {} layers",
                self.p_h.len(),
                self.layers()
            )));
        }
        if self
            .p_h
            .iter()
            .chain(std::iter::once(&self.p_add))
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::invalid("probabilities must lie in [0,1]"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(())
    }

    fn registry(&self) -> Arc<NodeRegistry> {
        Arc::new(
            NodeRegistry::new((0..self.n).map(|i| format!("v{i}")).collect())
                .expect("generated labels are unique"),
        )
    }

    fn rng_for_step(&self, t: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(t as u64);
        rng
    }
}

impl TryFrom<SynthConfigFile> for SynthConfig {
    type Error = Error;

    fn try_from(f: SynthConfigFile) -> Result<Self> {
        let gt_weights = if f.w.len() == f.layers {
            FusionWeights::new(f.w, f.w_add)?
        } else if f.w.len() + 1 == f.layers {
            FusionWeights::from_tail(&f.w, f.w_add)?
        } else {
            return Err(Error::Dimension(format!(
                "w has {} entries for H = {}",
                f.w.len(),
                f.layers
            )));
        };
        let cfg = SynthConfig {
            n: f.n,
            steps: f.steps,
            p_h: f.p_h,
            p_add: f.p_add,
            gt_weights,
            epsilon: f.epsilon,
            seed: f.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn uniform_weight(rng: &mut ChaCha8Rng, layers: usize) -> f64 {
    rng.random_range(1..=layers) as f64
}

/// Step-1 snapshot: Bernoulli(`p_h`) raw layers with weights uniform on
/// `{1..H}`, ancillary layers masking each raw edge with probability `p_add`.
pub fn init_snapshot(config: &SynthConfig) -> Result<MultiplexSnapshot> {
    config.validate()?;
    init_snapshot_in(config, &config.registry())
}

fn init_snapshot_in(config: &SynthConfig, reg: &Arc<NodeRegistry>) -> Result<MultiplexSnapshot> {
    let h = config.layers();
    let mut rng = config.rng_for_step(1);
    let mut raw = Vec::with_capacity(h);
    let mut add = Vec::with_capacity(h);
    for &p in &config.p_h {
        let mut r = WeightedGraph::new(reg.clone());
        for i in 0..config.n {
            for j in i + 1..config.n {
                if rng.random::<f64>() < p {
                    r.set_weight(i, j, uniform_weight(&mut rng, h))?;
                }
            }
        }
        let mut a = WeightedGraph::new(reg.clone());
        for (i, j, _) in r.edges() {
            if rng.random::<f64>() < config.p_add {
                a.set_weight(i, j, uniform_weight(&mut rng, h))?;
            }
        }
        raw.push(r);
        add.push(a);
    }
    MultiplexSnapshot::new(TimeLabel::Int(1), raw, add)
}

/// Edge counts per layer from `Multinomial(total, p_h / sum p_h)`, drawn by
/// sequential binomial conditioning.
fn multinomial_counts(rng: &mut ChaCha8Rng, total: usize, probs: &[f64]) -> Result<Vec<usize>> {
    let sum: f64 = probs.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Degenerate("all layer probabilities are zero".into()));
    }
    let mut counts = vec![0usize; probs.len()];
    let mut remaining = total as u64;
    let mut mass_left = 1.0;
    for (h, p) in probs.iter().enumerate() {
        let q = p / sum;
        if h + 1 == probs.len() {
            counts[h] = remaining as usize;
            break;
        }
        let cond = if mass_left <= 0.0 {
            1.0
        } else {
            (q / mass_left).clamp(0.0, 1.0)
        };
        let c = if remaining == 0 {
            0
        } else {
            Binomial::new(remaining, cond)
                .map_err(|e| Error::invalid(format!("binomial draw: {e}")))?
                .sample(rng)
        };
        counts[h] = c as usize;
        remaining -= c;
        mass_left -= q;
    }
    Ok(counts)
}

/// Snapshot for step `t > 1` decomposing the fixed fused graph `fused_initial`.
pub fn redistribute(
    t: usize,
    fused_initial: &WeightedGraph,
    config: &SynthConfig,
) -> Result<MultiplexSnapshot> {
    if t < 2 {
        return Err(Error::invalid("redistribution starts at step 2"));
    }
    if fused_initial.is_empty() {
        return Err(Error::Degenerate("the initial fused graph has no edges".into()));
    }
    let h = config.layers();
    let reg = fused_initial.registry().clone();
    let cum = config.gt_weights.cumulative();
    let w_add = config.gt_weights.w_add();
    let mut rng = config.rng_for_step(t);

    let mut edges: Vec<(usize, usize, f64)> = fused_initial.edges().collect();
    let counts = multinomial_counts(&mut rng, edges.len(), &config.p_h)?;
    edges.shuffle(&mut rng);

    let mut raw = Vec::with_capacity(h);
    let mut add = Vec::with_capacity(h);
    let mut start = 0;
    for (layer, &count) in counts.iter().enumerate() {
        let mut assigned = edges[start..start + count].to_vec();
        start += count;
        assigned.sort_by_key(|&(i, j, _)| (i, j));

        let mut r = WeightedGraph::new(reg.clone());
        let mut a = WeightedGraph::new(reg.clone());
        for (i, j, w) in assigned {
            let layer_weight = w / cum[layer];
            let mut add_w = 0.0;
            if rng.random::<f64>() < config.p_add {
                let temp = uniform_weight(&mut rng, h);
                add_w = if w_add == 0.0 {
                    temp
                } else {
                    temp.min(layer_weight / w_add - config.epsilon).max(0.0)
                };
            }
            a.set_weight(i, j, add_w)?;
            r.set_weight(i, j, (layer_weight - w_add * add_w).max(0.0))?;
        }
        raw.push(r);
        add.push(a);
    }
    MultiplexSnapshot::new(TimeLabel::Int(t as i64), raw, add)
}

/// Full synthetic series together with its ground-truth weights.
pub fn generate(config: &SynthConfig) -> Result<(MultiplexSeries, FusionWeights)> {
    config.validate()?;
    let reg = config.registry();
    let first = init_snapshot_in(config, &reg)?;
    let fused = fuse(&first, &config.gt_weights)?;
    if fused.is_empty() {
        return Err(Error::Degenerate(format!(
            "the step-1 graph has no edges (n = {}, p_h = {:?}); increase n or p_h",
            config.n, config.p_h
        )));
    }
    let mut snapshots = Vec::with_capacity(config.steps);
    snapshots.push(first);
    for t in 2..=config.steps {
        snapshots.push(redistribute(t, &fused, config)?);
    }
    Ok((MultiplexSeries::new(snapshots)?, config.gt_weights.clone()))
}
