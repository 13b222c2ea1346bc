//! Ownership bookkeeping, magnitude pruning and the per-task lifecycle.

mod ownership;
mod plans;
mod prune;
mod registry;

pub use ownership::{
    audit_transition, capacity_report, compose_task_weights, decode_runs, encode_runs, inference_keep,
    inference_weights, CapacityReport, ComposedWeights, Owner, OwnershipMap, TensorCapacity, FREE,
};
pub use plans::inference_plan;
pub use prune::{compute_prune_mask, prune_count, PruneDecision};
pub(crate) use registry::check_ratio;
pub use registry::{advance_lifecycle, LifecycleEvent, TaskDescriptor, TaskRegistry, TaskState};
