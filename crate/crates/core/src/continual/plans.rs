use super::ownership::{inference_weights, OwnershipMap};
use super::registry::TaskRegistry;
use crate::backbone::{Access, WeightPlan};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::task::TaskId;

/// Forward-only plan for `task`. With an ownership map every prunable
/// tensor is replaced by its inference weights for `task`; without one the
/// stored tensors are used as they are.
pub fn inference_plan(
    model: &Model,
    registry: &TaskRegistry,
    ownership: Option<&OwnershipMap>,
    task: TaskId,
) -> Result<WeightPlan> {
    registry.position(task)?;
    let mut plan = WeightPlan::new();
    if let Some(own) = ownership {
        for (name, labels) in own.iter() {
            let z = model
                .param(name)
                .ok_or_else(|| Error::Registry(format!("model has no tensor `{name}`")))?;
            plan.set(name, Access::Override(inference_weights(&z, labels, registry, task)?));
        }
    }
    Ok(plan)
}
