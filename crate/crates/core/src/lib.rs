//! Core algorithms for discrete-choice price optimization: demand model
//! families, optimal price solvers, feasibility projection, simulated data
//! generation, pricing-decision metrics, elasticity priors, and an
//! in-context price recommendation network.

pub mod choice;
pub mod constraints;
pub mod datagen;
pub mod metrics;
pub mod net;
pub mod price_opt;
pub mod priors;

pub use choice::{
    choice_probs, elasticity_matrix, expected_revenue, simulate_choice,
    ChoiceError, ChoiceModelSpec, ChoiceProbabilities, ElasticityMatrix, ElasticityMode,
    MixtureComponent, SPEC_SCHEMA_VERSION,
};
pub use constraints::{
    clamp_redistribute, inverse_softplus_chain, soft_penalty, softplus_chain, total_violation,
    violation_report, AvgPriceConstraint, AvgSense, ConstraintError, ConstraintSet,
    OrderingConstraint, ViolationReport, ViolationStats,
};
pub use datagen::{
    build_dataset, derive_subseed, icl_scales, normalize_prices, read_dataset, row_width,
    sample_spec, sample_whatif_prices, scale_by_icl_max, split_counts, whatif_own_elasticity,
    write_dataset_csv, write_dataset_meta, ChoiceDataset, DatagenError, DatasetMeta, DatasetRow,
    Family, IclScales, SegmentAttributes, NUM_ATTRIBUTES, NUM_SEGMENTS, NUM_WHATIF,
};
pub use datagen::{build_dataset_detailed, build_dataset_with_family};
pub use metrics::{
    compute_metrics, estimated_win_rate, EvalRecord, MetricsError, MetricsOptions, MetricsReport,
    STRONG_THRESHOLD,
};
pub use net::{
    grad_check, load_checkpoint, save_checkpoint, train, Ablation, C3poConfig, C3poModel,
    GradCheckReport, LossWeights, ModelError, TrainError, TrainOptions, TrainReport,
};
pub use price_opt::{
    foc_residual, lerner_gap, solve_logit_fixed_point, solve_logit_refined, solve_nonlinear,
    Bounds, CostVector, PriceLabel, PriceOptError, SolveMethod,
};
pub use priors::{
    ElasticityClass, ElasticityPrior, PriorError, PriorProvider, PriorSource, PriorTable,
    DEFAULT_RANGE,
};
