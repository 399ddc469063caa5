//! Alternating min-max training of two segmentation networks against a
//! pixel-wise critic, its ablations, and the mean-teacher and pseudo-label
//! baselines.
//!
//! Within one batch iteration the segmentation networks take `k_s` steps
//! with the critic frozen, then the critic takes `k_c` steps on detached
//! predictions.

mod batches;
mod config;
mod fit;
mod state;

pub use batches::{Cycler, CyclerState, RngState};
pub use config::{InferenceView, Mode, TrainConfig};
pub use fit::{
    batches_per_epoch, evaluate_models, fit, fit_baseline_mean_teacher, fit_baseline_pseudo_label, EpochEvent,
    EpochRecord, FitOutput,
};
pub use state::{critic_fit_step, derive_seed, LabeledBatch, Models, TrainState, UnlabeledBatch};
