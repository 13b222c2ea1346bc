use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::records::RatingRecord;
use crate::backbone::pad_to_window;
use crate::error::{Error, Result};
use crate::task::{TaskId, TaskKind};

/// One `(user, label)` pair of a non-sequence task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Instance {
    /// Dense user index into [`ContinualDataset::users`].
    pub user: u32,
    /// Dense label id in `0..num_labels`.
    pub label: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelTask {
    pub id: TaskId,
    pub kind: TaskKind,
    /// External name of each dense label id.
    pub label_names: Vec<String>,
    pub instances: Vec<Instance>,
}

impl LabelTask {
    pub fn num_labels(&self) -> usize {
        self.label_names.len()
    }
}

/// User sequences (the first task) plus user-label tasks joined by user index.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinualDataset {
    pub window: usize,
    /// External user ids; position is the dense user index.
    pub users: Vec<String>,
    /// External item id of dense item `i` at position `i - 1`.
    pub items: Vec<String>,
    /// Per user, the most recent item ids (dense, ≥ 1), oldest first, at
    /// most `window` long and never empty.
    pub sequences: Vec<Vec<u32>>,
    pub tasks: Vec<LabelTask>,
}

impl ContinualDataset {
    /// `|X|`, not counting the pad id.
    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    /// The user's sequence left-padded to the window.
    pub fn window_of(&self, user: u32) -> Vec<usize> {
        pad_to_window(&self.sequences[user as usize], self.window)
    }

    pub fn task(&self, id: TaskId) -> Result<&LabelTask> {
        self.tasks
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| Error::Data(format!("dataset has no task {id}")))
    }

    pub fn task_ids(&self) -> Vec<TaskId> {
        std::iter::once(TaskId(1)).chain(self.tasks.iter().map(|t| t.id)).collect()
    }

    /// Checks linkage, density and non-emptiness.
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        if self.sequences.len() != self.users.len() {
            return Err(Error::Data("one sequence per user is required".into()));
        }
        let bound = self.num_items() as u32;
        for (u, seq) in self.sequences.iter().enumerate() {
            if seq.is_empty() {
                return Err(Error::Data(format!("user {} has an empty sequence", self.users[u])));
            }
            if seq.len() > self.window {
                return Err(Error::Data(format!("user {} sequence exceeds the window", self.users[u])));
            }
            if let Some(&bad) = seq.iter().find(|&&i| i == 0 || i > bound) {
                return Err(Error::Vocabulary {
                    id: bad as usize,
                    bound: bound as usize + 1,
                });
            }
        }
        for task in &self.tasks {
            if task.id.0 <= 1 {
                return Err(Error::Data(format!("label task id {} collides with the sequence task", task.id)));
            }
            for inst in &task.instances {
                if inst.user as usize >= self.users.len() {
                    return Err(Error::Data(format!("{} references unknown user {}", task.id, inst.user)));
                }
                if inst.label as usize >= task.num_labels() {
                    return Err(Error::Data(format!("{} label {} out of range", task.id, inst.label)));
                }
            }
        }
        Ok(())
    }
}

/// Rating cut-offs used to derive the three MovieLens tasks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatingThresholds {
    /// Sequence items have rating `≤ sequence_max`.
    pub sequence_max: f64,
    /// Second-task labels have rating `≥ liked_min`.
    pub liked_min: f64,
    /// Third-task labels have rating `≥ loved_min`.
    pub loved_min: f64,
}

impl Default for RatingThresholds {
    fn default() -> Self {
        RatingThresholds {
            sequence_max: 3.0,
            liked_min: 4.0,
            loved_min: 5.0,
        }
    }
}

/// External user id, sequence tail, liked items, loved items.
type UserRows = (u64, Vec<u64>, Vec<u64>, Vec<u64>);

/// Builds the sequence task and two item-label tasks from timestamp-sorted
/// ratings. Users without any sequence item are dropped. Items are indexed
/// from 1 in ascending external-id order, labels from 0 per task.
pub fn derive_ml_tasks(records: &[RatingRecord], window: usize, thresholds: &RatingThresholds) -> Result<ContinualDataset> {
    if window < 1 {
        return Err(Error::Config("window must be at least 1".into()));
    }
    let mut by_user: BTreeMap<u64, Vec<&RatingRecord>> = BTreeMap::new();
    for r in records {
        by_user.entry(r.user).or_default().push(r);
    }
    let mut kept: Vec<UserRows> = Vec::new();
    for (user, mut rs) in by_user {
        rs.sort_by_key(|r| r.timestamp);
        let seq: Vec<u64> = rs.iter().filter(|r| r.rating <= thresholds.sequence_max).map(|r| r.item).collect();
        if seq.is_empty() {
            continue;
        }
        let tail = seq[seq.len().saturating_sub(window)..].to_vec();
        let liked = rs.iter().filter(|r| r.rating >= thresholds.liked_min).map(|r| r.item).collect();
        let loved = rs.iter().filter(|r| r.rating >= thresholds.loved_min).map(|r| r.item).collect();
        kept.push((user, tail, liked, loved));
    }
    let item_set: BTreeSet<u64> = kept.iter().flat_map(|k| k.1.iter().copied()).collect();
    let item_index: BTreeMap<u64, u32> = item_set.iter().enumerate().map(|(i, &it)| (it, i as u32 + 1)).collect();

    let label_task = |id: u16, pick: &dyn Fn(&UserRows) -> &Vec<u64>| {
        let vocab: BTreeSet<u64> = kept.iter().flat_map(|k| pick(k).iter().copied()).collect();
        let index: BTreeMap<u64, u32> = vocab.iter().enumerate().map(|(i, &it)| (it, i as u32)).collect();
        let mut instances = Vec::new();
        for (u, k) in kept.iter().enumerate() {
            for it in pick(k) {
                instances.push(Instance {
                    user: u as u32,
                    label: index[it],
                });
            }
        }
        LabelTask {
            id: TaskId(id),
            kind: TaskKind::Ranking,
            label_names: vocab.iter().map(u64::to_string).collect(),
            instances,
        }
    };
    let t2 = label_task(2, &|k| &k.2);
    let t3 = label_task(3, &|k| &k.3);
    let ds = ContinualDataset {
        window,
        users: kept.iter().map(|k| k.0.to_string()).collect(),
        items: item_set.iter().map(u64::to_string).collect(),
        sequences: kept.iter().map(|k| k.1.iter().map(|it| item_index[it]).collect()).collect(),
        tasks: vec![t2, t3],
    };
    ds.validate()?;
    Ok(ds)
}
