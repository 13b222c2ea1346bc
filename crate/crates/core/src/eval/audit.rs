use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate_task, MetricReport};
use crate::continual::{OwnershipMap, TaskRegistry, TaskState};
use crate::data::{ContinualDataset, DatasetSplits, SplitName};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::task::{TaskId, TaskKind};

/// Metrics of every committed task at one checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditSnapshot {
    pub label: String,
    /// Registered tasks in order.
    pub tasks: Vec<(TaskId, TaskKind)>,
    pub reports: BTreeMap<TaskId, MetricReport>,
}

#[allow(clippy::too_many_arguments)]
pub fn audit_snapshot(
    label: impl Into<String>,
    model: &Model,
    registry: &TaskRegistry,
    ownership: Option<&OwnershipMap>,
    dataset: &ContinualDataset,
    splits: &DatasetSplits,
    split: SplitName,
    cap: Option<usize>,
) -> Result<AuditSnapshot> {
    let mut reports = BTreeMap::new();
    for t in registry.tasks().iter().filter(|t| t.state == TaskState::Committed) {
        reports.insert(t.id, evaluate_task(model, registry, ownership, dataset, splits, t.id, split, cap)?);
    }
    Ok(AuditSnapshot {
        label: label.into(),
        tasks: registry.tasks().iter().map(|t| (t.id, t.kind)).collect(),
        reports,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub task: TaskId,
    /// Checkpoint at which the task was first seen committed.
    pub baseline_checkpoint: String,
    pub checkpoint: String,
    pub baseline: f64,
    pub value: f64,
    pub delta: f64,
    /// Whether every score is bit-identical to the baseline's.
    pub identical: bool,
}

/// For each task, its metric at every later checkpoint minus its metric at
/// the first checkpoint where it was committed.
pub fn forgetting_audit(snapshots: &[AuditSnapshot]) -> Result<Vec<AuditRow>> {
    if snapshots.is_empty() {
        return Err(Error::Audit("no checkpoints to compare".into()));
    }
    for pair in snapshots.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if b.tasks.len() < a.tasks.len() || b.tasks[..a.tasks.len()] != a.tasks[..] {
            return Err(Error::Audit(format!(
                "checkpoints `{}` and `{}` have incompatible task registries",
                a.label, b.label
            )));
        }
    }
    let mut rows = Vec::new();
    let mut baselines: BTreeMap<TaskId, (&str, &MetricReport)> = BTreeMap::new();
    for snap in snapshots {
        for (&task, report) in &snap.reports {
            match baselines.get(&task) {
                None => {
                    baselines.insert(task, (&snap.label, report));
                }
                Some(&(label, base)) => {
                    if base.count != report.count || base.metric != report.metric {
                        return Err(Error::Audit(format!("{task} was evaluated on different instances")));
                    }
                    rows.push(AuditRow {
                        task,
                        baseline_checkpoint: label.to_string(),
                        checkpoint: snap.label.clone(),
                        baseline: base.value,
                        value: report.value,
                        delta: report.value - base.value,
                        identical: report.fingerprint == base.fingerprint,
                    });
                }
            }
        }
    }
    Ok(rows)
}
