//! Desk-scale reproductions of view-selection experiments: greedy
//! next-view and batch selection during training, keyframe selection,
//! sparsification curves and parameter-group ablations.

pub mod error;
pub mod experiment;
pub mod output;
pub mod schedule;
pub mod sparsify;

pub use error::{HarnessError, Result};
pub use experiment::{
    initial_model, pretrain_on_pool, run_ablation, run_keyframes, run_selection_experiment, training_hessian,
    ExperimentOptions, RunResult,
};
pub use schedule::{ablation_mask, Method, Schedule};
pub use sparsify::{run_sparsification, spearman, SparsificationResult};
