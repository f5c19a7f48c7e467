//! In-context pricing network with three output heads.
//!
//! The model encodes each row of a dataset (segment attributes plus what-if
//! price/revenue probes) with a small transformer, mixes a set of labeled
//! context rows through a permutation-invariant block, conditions query rows
//! on that context through a masked attention block, and emits price,
//! revenue, and elasticity predictions from separate heads.
//!
//! The context/query mixing uses a prefix mask: context rows attend
//! bidirectionally among themselves (their order carries no information),
//! each query attends to the full context and itself only. This gives the
//! causal guarantee that matters here, queries never leak into the context
//! or into each other, while keeping predictions invariant to context
//! permutation.
//!
//! During training, constraint handling is a soft penalty term; at
//! prediction time an optional hard projection is applied to the emitted
//! prices so they satisfy the constraint set exactly.

mod model;
mod tape;
mod train;

pub use model::{C3poModel, ForwardOut, ModelError, ParamSet, TapeParams, K_MAX};
pub use tape::{causal_mask, prefix_mask, Tape, TapeError, TensorId};
pub use train::{
    grad_check, load_checkpoint, save_checkpoint, train, GradCheckReport, TrainError,
    TrainOptions, TrainReport,
};

use serde::{Deserialize, Serialize};

/// Relative weight of each training loss component.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LossWeights {
    pub price: f64,
    pub revenue: f64,
    pub elasticity: f64,
    pub anchor: f64,
    pub prior: f64,
    pub constraint: f64,
    /// Coefficient on the (negated) frozen revenue-head reward term.
    pub reward: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            price: 1.0,
            revenue: 0.25,
            elasticity: 0.25,
            anchor: 0.25,
            prior: 0.75,
            constraint: 2.0,
            reward: 0.25,
        }
    }
}

/// Architecture and optimization hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct C3poConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers_intra: usize,
    pub n_layers_cross: usize,
    pub n_layers_icl: usize,
    /// Hidden width of feed-forward sublayers as a multiple of `d_model`.
    pub ffn_mult: usize,
    /// Fraction of each dataset's rows withheld as labeled context.
    pub context_fraction: f64,
    /// Upper bound on context examples (the simplified in-context variant
    /// caps this at 100).
    pub max_context: usize,
    pub weights: LossWeights,
    pub learning_rate: f64,
    /// Query rows consumed per optimization step.
    pub batch_size: usize,
    pub steps_per_dataset: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for C3poConfig {
    fn default() -> Self {
        C3poConfig {
            d_model: 32,
            n_heads: 4,
            n_layers_intra: 5,
            n_layers_cross: 5,
            n_layers_icl: 6,
            ffn_mult: 8,
            context_fraction: 0.30,
            max_context: usize::MAX,
            weights: LossWeights::default(),
            learning_rate: 1e-4,
            batch_size: 128,
            steps_per_dataset: 1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

impl C3poConfig {
    /// Small configuration that trains in seconds on a laptop CPU; used by
    /// the CLI defaults and the training smoke tests.
    pub fn desk_scale() -> Self {
        C3poConfig {
            d_model: 16,
            n_heads: 2,
            n_layers_intra: 1,
            n_layers_cross: 1,
            n_layers_icl: 1,
            ffn_mult: 4,
            batch_size: 16,
            steps_per_dataset: 4,
            learning_rate: 3e-3,
            ..C3poConfig::default()
        }
    }
}

/// Training/prediction variants. `standard()` enables everything.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
pub struct Ablation {
    /// Queries ignore the labeled context entirely.
    pub icl_off: bool,
    /// Only the supervised price loss contributes to gradients.
    pub imitation_only: bool,
    /// Elasticity prior channel zeroed and prior loss dropped.
    pub prior_off: bool,
    /// Cap context at 100 examples.
    pub simple_icl: bool,
}

impl Ablation {
    pub fn standard() -> Self {
        Ablation::default()
    }
}
