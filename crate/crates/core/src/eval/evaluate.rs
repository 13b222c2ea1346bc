use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::metric_value;
use crate::backbone::{pad_to_window, WeightPlan};
use crate::continual::{inference_plan, OwnershipMap, TaskRegistry};
use crate::data::{ContinualDataset, DatasetSplits, SplitName};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::task::{TaskId, TaskKind};

/// Inputs and targets of one task split.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    pub task: TaskId,
    pub kind: TaskKind,
    pub windows: Vec<Vec<usize>>,
    pub targets: Vec<usize>,
}

/// Builds the evaluation set of `task` on `split`. For the sequence task
/// each user contributes one instance: the final item predicted from the
/// rest of the sequence; users with a single item are skipped. `cap`
/// keeps only the first instances.
pub fn eval_set(
    dataset: &ContinualDataset,
    splits: &DatasetSplits,
    task: TaskId,
    split: SplitName,
    cap: Option<usize>,
) -> Result<EvalSet> {
    let first = TaskId(1);
    let indices = splits.for_task(task, first)?.get(split);
    let limit = cap.unwrap_or(usize::MAX);
    let mut windows = Vec::new();
    let mut targets = Vec::new();
    let kind;
    if task == first {
        kind = TaskKind::Autoregressive;
        for &u in indices {
            if windows.len() >= limit {
                break;
            }
            let seq = &dataset.sequences[u];
            if let Some((&last, prefix)) = seq.split_last() {
                if prefix.is_empty() {
                    continue;
                }
                windows.push(pad_to_window(prefix, dataset.window));
                targets.push(last as usize);
            }
        }
    } else {
        let t = dataset.task(task)?;
        kind = t.kind;
        for &i in indices.iter().take(limit) {
            let inst = t.instances[i];
            windows.push(dataset.window_of(inst.user));
            targets.push(inst.label as usize);
        }
    }
    if targets.is_empty() {
        return Err(Error::Data(format!("{task} has no {split} instances")));
    }
    Ok(EvalSet {
        task,
        kind,
        windows,
        targets,
    })
}

/// Scores of every instance. The pad column of the sequence task is set to
/// negative infinity so it never ranks.
pub fn score_eval_set(model: &Model, plan: &WeightPlan, set: &EvalSet) -> Result<Vec<Vec<f64>>> {
    let mut scores = model.task_scores(set.task, plan, &set.windows)?;
    if set.kind == TaskKind::Autoregressive {
        for s in &mut scores {
            if let Some(pad) = s.first_mut() {
                *pad = f64::NEG_INFINITY;
            }
        }
    }
    Ok(scores)
}

/// SHA-256 over the bit patterns of every score, as lowercase hex.
pub fn score_fingerprint(scores: &[Vec<f64>]) -> String {
    let mut hasher = Sha256::new();
    for row in scores {
        for v in row {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: TaskId,
    pub split: SplitName,
    pub metric: String,
    pub value: f64,
    pub count: usize,
    /// Fingerprint of the underlying scores.
    pub fingerprint: String,
}

/// Scores `set` under the inference weights of its task.
pub fn evaluate_set(
    model: &Model,
    registry: &TaskRegistry,
    ownership: Option<&OwnershipMap>,
    set: &EvalSet,
    split: SplitName,
) -> Result<MetricReport> {
    let plan = inference_plan(model, registry, ownership, set.task)?;
    let scores = score_eval_set(model, &plan, set)?;
    let value = metric_value(set.kind, &scores, &set.targets)?;
    Ok(MetricReport {
        task: set.task,
        split,
        metric: set.kind.metric_name().to_string(),
        value,
        count: set.targets.len(),
        fingerprint: score_fingerprint(&scores),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_task(
    model: &Model,
    registry: &TaskRegistry,
    ownership: Option<&OwnershipMap>,
    dataset: &ContinualDataset,
    splits: &DatasetSplits,
    task: TaskId,
    split: SplitName,
    cap: Option<usize>,
) -> Result<MetricReport> {
    registry.get(task)?;
    let set = eval_set(dataset, splits, task, split, cap)?;
    evaluate_set(model, registry, ownership, &set, split)
}
