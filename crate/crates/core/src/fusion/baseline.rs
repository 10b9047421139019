//! Reference fusion rules that involve no learning.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::{fuse, FusionWeights, MultiplexSnapshot, WeightedGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    /// `w_1 = 1`, every other increment and `w_add` at 0.1.
    Unlearned,
    /// Support of the fused graph with every edge weight set to 1.
    Binary,
}

impl std::str::FromStr for BaselineKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unlearned" => Ok(Self::Unlearned),
            "binary" => Ok(Self::Binary),
            other => Err(crate::error::Error::invalid(format!(
                "unknown baseline '{other}' (expected unlearned or binary)"
            ))),
        }
    }
}

/// How a snapshot is turned into a single weighted graph.
#[derive(Debug, Clone, PartialEq)]
pub enum FusionRule {
    Weighted(FusionWeights),
    /// Fuse with the given weights, then set all positive weights to 1.
    Binary(FusionWeights),
}

impl FusionRule {
    pub fn apply(&self, snapshot: &MultiplexSnapshot) -> Result<WeightedGraph> {
        match self {
            FusionRule::Weighted(w) => fuse(snapshot, w),
            FusionRule::Binary(w) => fuse(snapshot, w)?.map_weights(|_| 1.0),
        }
    }
}

pub fn unlearned_weights(layers: usize) -> FusionWeights {
    FusionWeights::from_tail(&vec![0.1; layers.saturating_sub(1)], 0.1)
        .expect("constant weights are valid")
}

pub fn baseline_weights(kind: BaselineKind, layers: usize) -> FusionRule {
    match kind {
        BaselineKind::Unlearned => FusionRule::Weighted(unlearned_weights(layers)),
        // Any weights with w_add > 0 give the full raw-and-ancillary support.
        BaselineKind::Binary => FusionRule::Binary(unlearned_weights(layers)),
    }
}
