//! Structural-consistency losses evaluated directly from fused graphs.
//!
//! This is the reference path: fuse every snapshot, restrict consecutive
//! pairs to their co-existing nodes, then compare cosine similarity matrices
//! and normalized degrees. The optimizer uses [`super::objective`], which
//! must agree with these functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    coexist_restrict, cosine_similarity_matrix, fuse, normalized_degrees, FusionWeights,
    MultiplexSeries, WeightedGraph,
};

/// Coefficients of the similarity, degree and regularization terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha1", self.alpha1), ("alpha2", self.alpha2), ("alpha3", self.alpha3)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and nonnegative")));
            }
        }
        Ok(())
    }

    /// The same weights with the regularization switched off, as used for
    /// test-loss reporting and model selection.
    pub fn without_reg(self) -> Self {
        Self {
            alpha3: 0.0,
            ..self
        }
    }
}

/// Per consecutive-pair loss contributions; index `p` covers snapshots `p`
/// and `p + 1` (zero based).
#[derive(Debug, Clone, PartialEq)]
pub struct PairTerms {
    pub sim: Vec<f64>,
    pub deg: Vec<f64>,
}

impl PairTerms {
    pub fn len(&self) -> usize {
        self.sim.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sim.is_empty()
    }

    /// `alpha1 * mean(sim) + alpha2 * mean(deg)` over `subset`, plus
    /// `alpha3 * reg`.
    pub fn combine(&self, lw: &LossWeights, reg: f64, subset: &[usize]) -> Result<f64> {
        if subset.is_empty() {
            return Err(Error::invalid("loss subset selects no time-step pairs"));
        }
        let mut sim = 0.0;
        let mut deg = 0.0;
        for &p in subset {
            if p >= self.len() {
                return Err(Error::invalid(format!(
                    "pair index {p} outside 0..{}",
                    self.len()
                )));
            }
            sim += self.sim[p];
            deg += self.deg[p];
        }
        let k = subset.len() as f64;
        Ok(lw.alpha1 * sim / k + lw.alpha2 * deg / k + lw.alpha3 * reg)
    }
}

/// Squared differences of cosine matrices (ordered pairs, diagonal included)
/// and of normalized degrees for one restricted pair of graphs.
pub fn pair_contribution(g_t: &WeightedGraph, g_next: &WeightedGraph) -> Result<(f64, f64)> {
    let (nodes, a, b) = coexist_restrict(g_t, g_next)?;
    if nodes.is_empty() {
        return Ok((0.0, 0.0));
    }
    let (da, db) = (a.dense(&nodes), b.dense(&nodes));
    let sim = (&cosine_similarity_matrix(&da) - &cosine_similarity_matrix(&db))
        .mapv(|x| x * x)
        .sum();
    let deg = (&normalized_degrees(&da) - &normalized_degrees(&db))
        .mapv(|x| x * x)
        .sum();
    Ok((sim, deg))
}

pub fn pair_terms_for_graphs(graphs: &[WeightedGraph]) -> Result<PairTerms> {
    let mut terms = PairTerms {
        sim: Vec::with_capacity(graphs.len().saturating_sub(1)),
        deg: Vec::with_capacity(graphs.len().saturating_sub(1)),
    };
    for pair in graphs.windows(2) {
        let (s, d) = pair_contribution(&pair[0], &pair[1])?;
        terms.sim.push(s);
        terms.deg.push(d);
    }
    Ok(terms)
}

pub fn pair_terms(series: &MultiplexSeries, weights: &FusionWeights) -> Result<PairTerms> {
    let graphs = series
        .snapshots()
        .iter()
        .map(|s| fuse(s, weights))
        .collect::<Result<Vec<_>>>()?;
    pair_terms_for_graphs(&graphs)
}

fn all_pairs(series: &MultiplexSeries) -> Vec<usize> {
    (0..series.len() - 1).collect()
}

pub fn loss_sim(series: &MultiplexSeries, weights: &FusionWeights) -> Result<f64> {
    let terms = pair_terms(series, weights)?;
    Ok(terms.sim.iter().sum::<f64>() / terms.len() as f64)
}

pub fn loss_deg(series: &MultiplexSeries, weights: &FusionWeights) -> Result<f64> {
    let terms = pair_terms(series, weights)?;
    Ok(terms.deg.iter().sum::<f64>() / terms.len() as f64)
}

/// `(w_add^2 + sum_{h>=2} w_h^2) / H`; the fixed `w_1` is not penalized.
pub fn loss_reg(weights: &FusionWeights) -> f64 {
    let w = weights.increments();
    let tail: f64 = w[1..].iter().map(|x| x * x).sum();
    (weights.w_add().powi(2) + tail) / w.len() as f64
}

/// Weighted total loss over the pair indices in `subset` (zero based).
pub fn total_loss(
    series: &MultiplexSeries,
    weights: &FusionWeights,
    loss_weights: &LossWeights,
    subset: &[usize],
) -> Result<f64> {
    let terms = pair_terms(series, weights)?;
    terms.combine(loss_weights, loss_reg(weights), subset)
}

/// Total loss over every consecutive pair.
pub fn total_loss_all(
    series: &MultiplexSeries,
    weights: &FusionWeights,
    loss_weights: &LossWeights,
) -> Result<f64> {
    total_loss(series, weights, loss_weights, &all_pairs(series))
}
