use std::collections::BTreeMap;

use serde::Serialize;

use super::prune::PruneDecision;
use super::registry::{TaskRegistry, TaskState};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::task::TaskId;

/// Label stored for elements no task owns.
pub const FREE: u16 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Owner {
    Free,
    Task(TaskId),
}

impl Owner {
    pub fn from_label(label: u16) -> Self {
        if label == FREE {
            Owner::Free
        } else {
            Owner::Task(TaskId(label))
        }
    }
}

/// One owner label per element of every prunable tensor. Task masks are
/// derived views, so two tasks can never own the same element.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OwnershipMap {
    tensors: BTreeMap<String, Vec<u16>>,
}

impl OwnershipMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor whose elements are all free.
    pub fn insert_free(&mut self, name: impl Into<String>, len: usize) {
        self.tensors.insert(name.into(), vec![FREE; len]);
    }

    pub fn insert_labels(&mut self, name: impl Into<String>, labels: Vec<u16>) {
        self.tensors.insert(name.into(), labels);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn labels(&self, name: &str) -> Result<&[u16]> {
        self.tensors
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Registry(format!("`{name}` is not a prunable tensor")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[u16])> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn owner(&self, name: &str, index: usize) -> Result<Owner> {
        let labels = self.labels(name)?;
        labels
            .get(index)
            .map(|&l| Owner::from_label(l))
            .ok_or(Error::Vocabulary { id: index, bound: labels.len() })
    }

    /// `G_T` for one tensor.
    pub fn mask(&self, name: &str, task: TaskId) -> Result<Vec<bool>> {
        Ok(self.labels(name)?.iter().map(|&l| l == task.0).collect())
    }

    pub fn total(&self) -> usize {
        self.tensors.values().map(Vec::len).sum()
    }

    /// Elements carrying `label` across all tensors.
    pub fn count(&self, label: u16) -> usize {
        self.tensors.values().flatten().filter(|&&l| l == label).count()
    }

    /// Labels free elements that survived `decision` as owned by `task`.
    /// Freed elements keep the free label.
    pub fn claim_survivors(&mut self, name: &str, decision: &PruneDecision, task: TaskId) -> Result<()> {
        let labels = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::Registry(format!("`{name}` is not a prunable tensor")))?;
        let mut freed = vec![false; labels.len()];
        for &i in &decision.freed {
            let slot = freed.get_mut(i).ok_or(Error::Vocabulary { id: i, bound: labels.len() })?;
            *slot = true;
        }
        for (l, f) in labels.iter_mut().zip(freed) {
            if *l == FREE && !f {
                *l = task.0;
            }
        }
        Ok(())
    }

    /// Gives every free element to `task`.
    pub fn claim_all_free(&mut self, task: TaskId) {
        for labels in self.tensors.values_mut() {
            for l in labels.iter_mut().filter(|l| **l == FREE) {
                *l = task.0;
            }
        }
    }
}

/// Run-length encoding of one label array as `(label, run length)` pairs.
pub fn encode_runs(labels: &[u16]) -> Vec<(u16, u32)> {
    let mut runs: Vec<(u16, u32)> = Vec::new();
    for &l in labels {
        match runs.last_mut() {
            Some((last, n)) if *last == l => *n += 1,
            _ => runs.push((l, 1)),
        }
    }
    runs
}

pub fn decode_runs(runs: &[(u16, u32)]) -> Vec<u16> {
    runs.iter()
        .flat_map(|&(l, n)| std::iter::repeat_n(l, n as usize))
        .collect()
}

/// Stored weights as task `task` sees them while training, plus the
/// elements its gradients may reach.
#[derive(Clone, Debug, PartialEq)]
pub struct ComposedWeights<'a> {
    /// Identical to the stored tensor: earlier tasks' elements enter the
    /// forward pass unchanged and freed elements are already zero.
    pub effective: &'a Tensor,
    pub trainable: Vec<bool>,
}

/// Splits a stored tensor into a forward value and the trainable set of
/// the active task `task`.
pub fn compose_task_weights<'a>(
    z_hat: &'a Tensor,
    labels: &[u16],
    registry: &TaskRegistry,
    task: TaskId,
) -> Result<ComposedWeights<'a>> {
    if labels.len() != z_hat.len() {
        return Err(Error::dim("compose_task_weights", "elements", z_hat.len(), labels.len()));
    }
    registry.require_predecessors_committed(task)?;
    let trainable = match registry.state(task)? {
        TaskState::Training => labels.iter().map(|&l| l == FREE).collect(),
        TaskState::Pruned | TaskState::Retraining => labels.iter().map(|&l| l == task.0).collect(),
        TaskState::Committed => {
            return Err(Error::Lifecycle {
                task: task.0,
                expected: TaskState::Training.to_string(),
                actual: TaskState::Committed.to_string(),
            })
        }
    };
    Ok(ComposedWeights {
        effective: z_hat,
        trainable,
    })
}

/// Keep-mask for inference on task `task`: elements owned by tasks up to
/// and including `task` in registry order, plus free elements while
/// `task` is still in its first training phase.
pub fn inference_keep(labels: &[u16], registry: &TaskRegistry, task: TaskId) -> Result<Vec<bool>> {
    let pos = registry.position(task)?;
    let free_visible = registry.state(task)? == TaskState::Training;
    // Label -> visible, resolved once per distinct label.
    let mut visible: BTreeMap<u16, bool> = BTreeMap::new();
    visible.insert(FREE, free_visible);
    let mut keep = Vec::with_capacity(labels.len());
    for &l in labels {
        let v = match visible.get(&l) {
            Some(&v) => v,
            None => {
                let v = registry.position(TaskId(l))? <= pos;
                visible.insert(l, v);
                v
            }
        };
        keep.push(v);
    }
    Ok(keep)
}

/// `Z ⊙ Σ_{k ≤ task} G_k`, computed by selection so kept elements are
/// bit-identical to the stored ones.
pub fn inference_weights(z_hat: &Tensor, labels: &[u16], registry: &TaskRegistry, task: TaskId) -> Result<Tensor> {
    if labels.len() != z_hat.len() {
        return Err(Error::dim("inference_weights", "elements", z_hat.len(), labels.len()));
    }
    let keep = inference_keep(labels, registry, task)?;
    let data = z_hat
        .data()
        .iter()
        .zip(keep)
        .map(|(&v, k)| if k { v } else { 0.0 })
        .collect();
    Tensor::new(z_hat.shape().to_vec(), data)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCapacity {
    pub name: String,
    pub free: usize,
    pub total: usize,
}

impl TensorCapacity {
    pub fn free_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.free as f64 / self.total as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CapacityReport {
    pub tensors: Vec<TensorCapacity>,
    pub free: usize,
    pub total: usize,
    /// Elements per owning task id.
    pub owned: BTreeMap<u16, usize>,
}

impl CapacityReport {
    pub fn free_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.free as f64 / self.total as f64
        }
    }
}

pub fn capacity_report(ownership: &OwnershipMap) -> CapacityReport {
    let mut owned = BTreeMap::new();
    let tensors: Vec<TensorCapacity> = ownership
        .iter()
        .map(|(name, labels)| {
            let mut free = 0;
            for &l in labels {
                if l == FREE {
                    free += 1;
                } else {
                    *owned.entry(l).or_insert(0) += 1;
                }
            }
            TensorCapacity {
                name: name.to_string(),
                free,
                total: labels.len(),
            }
        })
        .collect();
    CapacityReport {
        free: tensors.iter().map(|t| t.free).sum(),
        total: tensors.iter().map(|t| t.total).sum(),
        tensors,
        owned,
    }
}

/// Checks the ownership invariants across one transition: every label names
/// a registered task or is free, labels of committed tasks did not move,
/// and owned plus free elements account for every prunable element.
pub fn audit_transition(before: &OwnershipMap, after: &OwnershipMap, registry: &TaskRegistry) -> Result<()> {
    if before.tensors.keys().ne(after.tensors.keys()) {
        return Err(Error::Audit("prunable tensor set changed".into()));
    }
    for (name, new) in &after.tensors {
        let old = &before.tensors[name];
        if old.len() != new.len() {
            return Err(Error::Audit(format!("`{name}` changed length")));
        }
        for (i, (&o, &n)) in old.iter().zip(new).enumerate() {
            if n != FREE && registry.get(TaskId(n)).is_err() {
                return Err(Error::Audit(format!("`{name}`[{i}] owned by unregistered task {n}")));
            }
            if o != FREE && o != n && registry.state(TaskId(o)).ok() == Some(TaskState::Committed) {
                return Err(Error::Audit(format!(
                    "`{name}`[{i}] moved from committed task {o} to label {n}"
                )));
            }
        }
    }
    let report = capacity_report(after);
    let owned: usize = report.owned.values().sum();
    if owned + report.free != after.total() {
        return Err(Error::Audit("owned and free counts do not cover the map".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continual::prune::compute_prune_mask;
    use crate::continual::registry::{advance_lifecycle, LifecycleEvent};
    use crate::task::TaskKind;

    fn commit(r: &mut TaskRegistry, id: u16) {
        for e in [LifecycleEvent::FinishTrain, LifecycleEvent::FinishPrune, LifecycleEvent::FinishRetrain] {
            advance_lifecycle(r, TaskId(id), e).unwrap();
        }
    }

    #[test]
    fn ratio_seven_tenths_leaves_thirty_owned() {
        let values: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut map = OwnershipMap::new();
        map.insert_free("w", 100);
        let d = compute_prune_mask(&values, &[true; 100], 0.7).unwrap();
        map.claim_survivors("w", &d, TaskId(1)).unwrap();
        assert_eq!(map.count(1), 30);
        assert_eq!(map.count(FREE), 70);
        let report = capacity_report(&map);
        assert!((report.free_fraction() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn sequential_ratios_compose() {
        let values: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64 + 1.0).collect();
        let mut map = OwnershipMap::new();
        map.insert_free("w", 1000);
        for (task, q) in [(1u16, 0.7), (2, 0.8)] {
            let candidates: Vec<bool> = map.labels("w").unwrap().iter().map(|&l| l == FREE).collect();
            let d = compute_prune_mask(&values, &candidates, q).unwrap();
            map.claim_survivors("w", &d, TaskId(task)).unwrap();
        }
        assert!((capacity_report(&map).free_fraction() - 0.56).abs() < 1e-12);
    }

    #[test]
    fn inference_masks_follow_task_order() {
        let mut r = TaskRegistry::new();
        r.register(TaskId(1), TaskKind::Autoregressive, 3, Some(0.5)).unwrap();
        commit(&mut r, 1);
        r.register(TaskId(2), TaskKind::Ranking, 3, Some(0.5)).unwrap();
        commit(&mut r, 2);
        let z = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let labels = [1, 2, FREE, 1];
        let w1 = inference_weights(&z, &labels, &r, TaskId(1)).unwrap();
        let w2 = inference_weights(&z, &labels, &r, TaskId(2)).unwrap();
        assert_eq!(w1.data(), &[1.0, 0.0, 0.0, 4.0]);
        assert_eq!(w2.data(), &[1.0, 2.0, 0.0, 4.0]);
        assert!(matches!(inference_weights(&z, &labels, &r, TaskId(9)), Err(Error::Registry(_))));
    }

    #[test]
    fn compose_requires_committed_predecessors() {
        let mut r = TaskRegistry::new();
        r.register(TaskId(1), TaskKind::Autoregressive, 3, Some(0.5)).unwrap();
        let z = Tensor::zeros(vec![2, 2]);
        let c = compose_task_weights(&z, &[FREE; 4], &r, TaskId(1)).unwrap();
        assert_eq!(c.trainable, vec![true; 4]);
        commit(&mut r, 1);
        r.register(TaskId(2), TaskKind::Ranking, 3, None).unwrap();
        let c = compose_task_weights(&z, &[1, FREE, FREE, 1], &r, TaskId(2)).unwrap();
        assert_eq!(c.trainable, vec![false, true, true, false]);
    }

    #[test]
    fn runs_round_trip() {
        let labels = vec![0, 0, 1, 1, 1, 0, 2];
        let runs = encode_runs(&labels);
        assert_eq!(runs, vec![(0, 2), (1, 3), (0, 1), (2, 1)]);
        assert_eq!(decode_runs(&runs), labels);
    }
}
