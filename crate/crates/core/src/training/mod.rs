//! Losses, sampling, the optimiser and the training regimes.

mod adam;
mod config;
mod learner;
mod losses;
mod run;
mod sampler;

pub use adam::{AdamState, Moments, BETA1, BETA2, EPSILON};
pub use config::{Mode, RunConfig, TaskOverride, TaskSettings, TrainConfig};
pub use learner::{fresh_ownership, Learner};
pub use losses::{autoregressive_loss, bpr_loss, cross_entropy_loss, shift_for_next_item, BoundHead};
pub use run::{
    label_space, retrain_after_prune, run_task, run_task_training, write_history, HistoryRecord, Phase, PhaseSummary,
    TaskData,
};
pub use sampler::PopularitySampler;
