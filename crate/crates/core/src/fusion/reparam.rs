//! Unconstrained parameterization: softplus for the increments, logistic for
//! the ancillary coefficient.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::FusionWeights;

/// Stand-in for exact zeros (and for `1 - w_add` at one) before inverting.
pub const CLAMP: f64 = 0.0001;

/// Optimizer-space parameters for `w_2..w_H` and `w_add`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeParams {
    pub w_tilde: Vec<f64>,
    pub w_add_tilde: f64,
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn inverse_softplus(y: f64) -> f64 {
    // log(exp(y) - 1), rewritten to stay finite for large y.
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Maps constrained weights to free parameters, replacing `w_h = 0` by
/// [`CLAMP`] and `w_add` in `{0, 1}` by `CLAMP` / `1 - CLAMP`.
pub fn to_free(weights: &FusionWeights) -> FreeParams {
    let w_tilde = weights.increments()[1..]
        .iter()
        .map(|&w| inverse_softplus(if w == 0.0 { CLAMP } else { w }))
        .collect();
    let a = weights.w_add();
    let a = if a <= 0.0 {
        CLAMP
    } else if a >= 1.0 {
        1.0 - CLAMP
    } else {
        a
    };
    FreeParams {
        w_tilde,
        w_add_tilde: logit(a),
    }
}

pub fn to_constrained(free: &FreeParams) -> Result<FusionWeights> {
    let tail: Vec<f64> = free.w_tilde.iter().map(|&x| softplus(x)).collect();
    FusionWeights::from_tail(&tail, logistic(free.w_add_tilde))
}

impl FreeParams {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.w_tilde.clone();
        v.push(self.w_add_tilde);
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        let (last, head) = v.split_last().expect("at least the w_add slot");
        Self {
            w_tilde: head.to_vec(),
            w_add_tilde: *last,
        }
    }

    /// Derivatives of the constrained parameters with respect to the free ones.
    pub fn jacobian_diag(&self) -> Vec<f64> {
        let mut d: Vec<f64> = self.w_tilde.iter().map(|&x| logistic(x)).collect();
        let a = logistic(self.w_add_tilde);
        d.push(a * (1.0 - a));
        d
    }
}
