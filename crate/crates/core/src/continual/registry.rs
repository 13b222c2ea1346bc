use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{TaskId, TaskKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskState {
    Training,
    Pruned,
    Retraining,
    Committed,
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskState::Training => "training",
            TaskState::Pruned => "pruned",
            TaskState::Retraining => "retraining",
            TaskState::Committed => "committed",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LifecycleEvent {
    FinishTrain,
    FinishPrune,
    FinishRetrain,
}

impl LifecycleEvent {
    fn legal_from(self) -> TaskState {
        match self {
            LifecycleEvent::FinishTrain => TaskState::Training,
            LifecycleEvent::FinishPrune => TaskState::Pruned,
            LifecycleEvent::FinishRetrain => TaskState::Retraining,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub id: TaskId,
    pub kind: TaskKind,
    pub labels: usize,
    /// `None` for tasks that skip the prune/retrain phases.
    pub prune_ratio: Option<f64>,
    pub state: TaskState,
    /// Best validation metric seen while training, before any prune.
    pub best_metric: Option<f64>,
}

/// Ordered task descriptors. Order of registration is the task order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskRegistry {
    tasks: Vec<TaskDescriptor>,
}

impl TaskRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tasks(&self) -> &[TaskDescriptor] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Appends a task in state `Training`. Every earlier task must be committed.
    pub fn register(&mut self, id: TaskId, kind: TaskKind, labels: usize, prune_ratio: Option<f64>) -> Result<()> {
        if id.0 == 0 {
            return Err(Error::Registry("task id 0 is reserved for free elements".into()));
        }
        if self.tasks.iter().any(|t| t.id == id) {
            return Err(Error::Registry(format!("task {id} is already registered")));
        }
        if let Some(open) = self.active() {
            return Err(Error::Lifecycle {
                task: open.id.0,
                expected: TaskState::Committed.to_string(),
                actual: open.state.to_string(),
            });
        }
        if labels == 0 {
            return Err(Error::Registry(format!("task {id} has an empty label space")));
        }
        if let Some(q) = prune_ratio {
            check_ratio(q)?;
        }
        self.tasks.push(TaskDescriptor {
            id,
            kind,
            labels,
            prune_ratio,
            state: TaskState::Training,
            best_metric: None,
        });
        Ok(())
    }

    pub fn get(&self, id: TaskId) -> Result<&TaskDescriptor> {
        self.tasks
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| Error::Registry(format!("unknown task {id}")))
    }

    pub fn get_mut(&mut self, id: TaskId) -> Result<&mut TaskDescriptor> {
        self.tasks
            .iter_mut()
            .find(|t| t.id == id)
            .ok_or_else(|| Error::Registry(format!("unknown task {id}")))
    }

    /// Zero-based position in task order.
    pub fn position(&self, id: TaskId) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.id == id)
            .ok_or_else(|| Error::Registry(format!("unknown task {id}")))
    }

    pub fn state(&self, id: TaskId) -> Result<TaskState> {
        Ok(self.get(id)?.state)
    }

    /// The single task that is not yet committed, if any.
    pub fn active(&self) -> Option<&TaskDescriptor> {
        self.tasks.iter().find(|t| t.state != TaskState::Committed)
    }

    pub fn first(&self) -> Option<TaskId> {
        self.tasks.first().map(|t| t.id)
    }

    /// Checks that every task ordered before `id` is committed.
    pub fn require_predecessors_committed(&self, id: TaskId) -> Result<()> {
        let pos = self.position(id)?;
        if let Some(open) = self.tasks[..pos].iter().find(|t| t.state != TaskState::Committed) {
            return Err(Error::Lifecycle {
                task: open.id.0,
                expected: TaskState::Committed.to_string(),
                actual: open.state.to_string(),
            });
        }
        Ok(())
    }

    pub fn require_state(&self, id: TaskId, expected: TaskState) -> Result<()> {
        let actual = self.state(id)?;
        if actual != expected {
            return Err(Error::Lifecycle {
                task: id.0,
                expected: expected.to_string(),
                actual: actual.to_string(),
            });
        }
        Ok(())
    }

    pub fn ids(&self) -> Vec<TaskId> {
        self.tasks.iter().map(|t| t.id).collect()
    }
}

pub(crate) fn check_ratio(q: f64) -> Result<()> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::Config(format!("prune ratio must lie in [0, 1), got {q}")));
    }
    Ok(())
}

/// Moves task `id` one step along its lifecycle. Tasks registered without a
/// prune ratio go straight from `Training` to `Committed`.
pub fn advance_lifecycle(registry: &mut TaskRegistry, id: TaskId, event: LifecycleEvent) -> Result<TaskState> {
    let task = registry.get_mut(id)?;
    let expected = event.legal_from();
    if task.state != expected {
        return Err(Error::Lifecycle {
            task: id.0,
            expected: expected.to_string(),
            actual: task.state.to_string(),
        });
    }
    task.state = match (event, task.prune_ratio.is_some()) {
        (LifecycleEvent::FinishTrain, true) => TaskState::Pruned,
        (LifecycleEvent::FinishTrain, false) => TaskState::Committed,
        (LifecycleEvent::FinishPrune, _) => TaskState::Retraining,
        (LifecycleEvent::FinishRetrain, _) => TaskState::Committed,
    };
    Ok(task.state)
}
