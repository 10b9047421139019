//! Learning layer-combination weights from structural consistency between
//! consecutive time steps.

mod baseline;
mod kernels;
mod fit;
mod loss;
pub mod objective;
mod reparam;

pub use baseline::{baseline_weights, unlearned_weights, BaselineKind, FusionRule};
pub use fit::{
    fit, init_grid, select_best, split_losses, zero_tiny, Adam, FitConfig, FitResult,
    Initialization, RunStatus, SplitLosses, SplitSpec, Trajectory, UNIFORM_GRID,
};
pub use loss::{
    loss_deg, loss_reg, loss_sim, pair_contribution, pair_terms, pair_terms_for_graphs,
    total_loss, total_loss_all, LossWeights, PairTerms,
};
pub use objective::CompiledObjective;
pub use reparam::{
    inverse_softplus, logistic, logit, softplus, to_constrained, to_free, FreeParams, CLAMP,
};
