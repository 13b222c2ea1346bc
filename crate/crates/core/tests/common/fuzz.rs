//! Lifecycle simulator over a bare ownership map: "training" redraws the
//! elements the active task may write, pruning and committing go through
//! the library, and every transition is checked against the ownership
//! invariants.

use conure::continual::{
    advance_lifecycle, audit_transition, compose_task_weights, compute_prune_mask, LifecycleEvent, OwnershipMap,
    TaskRegistry, TaskState, FREE,
};
use conure::numerics::Tensor;
use conure::{TaskId, TaskKind};
use rand::Rng;

use super::rng;

#[derive(Clone, Debug)]
pub struct LifecycleCase {
    pub sizes: Vec<usize>,
    /// One entry per task; `None` commits without pruning.
    pub ratios: Vec<Option<f64>>,
    pub seed: u64,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn invariants(before: &OwnershipMap, after: &OwnershipMap, reg: &TaskRegistry) -> Result<(), String> {
    audit_transition(before, after, reg).map_err(|e| e.to_string())?;
    let ids = reg.ids();
    let mut owned = 0;
    for &t in &ids {
        owned += after.count(t.0);
    }
    check(owned + after.count(FREE) == after.total(), || "owned plus free is not the total".into())?;
    for (name, labels) in after.iter() {
        let old = before.labels(name).map_err(|e| e.to_string())?;
        for (i, (&o, &n)) in old.iter().zip(labels).enumerate() {
            let committed = o != FREE && reg.state(TaskId(o)).ok() == Some(TaskState::Committed);
            check(!committed || o == n, || format!("{name}[{i}] left committed task {o}"))?;
        }
        // Masks of distinct tasks never overlap.
        for (a, &ta) in ids.iter().enumerate() {
            let ma = after.mask(name, ta).map_err(|e| e.to_string())?;
            for &tb in &ids[a + 1..] {
                let mb = after.mask(name, tb).map_err(|e| e.to_string())?;
                check(ma.iter().zip(&mb).all(|(x, y)| !(x & y)), || format!("{ta} and {tb} overlap in {name}"))?;
            }
        }
    }
    Ok(())
}

fn train(
    values: &mut [Tensor],
    map: &OwnershipMap,
    reg: &TaskRegistry,
    task: TaskId,
    rng: &mut impl Rng,
) -> Result<(), String> {
    for (k, (name, labels)) in map.iter().enumerate() {
        let frozen: Vec<(usize, u64)> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != FREE && reg.state(TaskId(l)).ok() == Some(TaskState::Committed))
            .map(|(i, _)| (i, values[k].data()[i].to_bits()))
            .collect();
        let trainable = compose_task_weights(&values[k], labels, reg, task).map_err(|e| e.to_string())?.trainable;
        for (v, t) in values[k].data_mut().iter_mut().zip(trainable) {
            if t {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        for (i, bits) in frozen {
            check(values[k].data()[i].to_bits() == bits, || format!("{name}[{i}] of a committed task was written"))?;
        }
    }
    Ok(())
}

/// Runs one case and returns the number of transitions checked.
pub fn run_lifecycle(case: &LifecycleCase) -> Result<usize, String> {
    let mut r = rng(case.seed);
    let mut map = OwnershipMap::new();
    let mut values = Vec::new();
    for (k, &n) in case.sizes.iter().enumerate() {
        map.insert_free(format!("w{k}"), n);
        values.push(Tensor::uniform(vec![n], 1.0, &mut r));
    }
    let mut reg = TaskRegistry::new();
    let mut transitions = 0;
    for (pos, ratio) in case.ratios.iter().enumerate() {
        let task = TaskId(pos as u16 + 1);
        let kind = if pos == 0 { TaskKind::Autoregressive } else { TaskKind::Ranking };
        reg.register(task, kind, 4, *ratio).map_err(|e| e.to_string())?;
        train(&mut values, &map, &reg, task, &mut r)?;
        let before = map.clone();
        match ratio {
            Some(q) => {
                for (k, (name, labels)) in before.iter().enumerate() {
                    let candidates: Vec<bool> = labels.iter().map(|&l| l == FREE).collect();
                    let h = candidates.iter().filter(|&&c| c).count();
                    let d = compute_prune_mask(values[k].data(), &candidates, *q).map_err(|e| e.to_string())?;
                    check(d.freed.len() == (q * h as f64).round() as usize, || {
                        format!("{name}: freed {} of {h} at ratio {q}", d.freed.len())
                    })?;
                    check(d.freed.iter().all(|&i| candidates[i]), || format!("{name}: freed an owned element"))?;
                    for &i in &d.freed {
                        values[k].data_mut()[i] = 0.0;
                    }
                    map.claim_survivors(name, &d, task).map_err(|e| e.to_string())?;
                }
                advance_lifecycle(&mut reg, task, LifecycleEvent::FinishTrain).map_err(|e| e.to_string())?;
                invariants(&before, &map, &reg)?;
                advance_lifecycle(&mut reg, task, LifecycleEvent::FinishPrune).map_err(|e| e.to_string())?;
                train(&mut values, &map, &reg, task, &mut r)?;
                let before = map.clone();
                advance_lifecycle(&mut reg, task, LifecycleEvent::FinishRetrain).map_err(|e| e.to_string())?;
                invariants(&before, &map, &reg)?;
                transitions += 2;
            }
            None => {
                advance_lifecycle(&mut reg, task, LifecycleEvent::FinishTrain).map_err(|e| e.to_string())?;
                map.claim_all_free(task);
                invariants(&before, &map, &reg)?;
                transitions += 1;
            }
        }
        // Freed elements hold zero until a later task trains them.
        for (k, (_, labels)) in map.iter().enumerate() {
            for (i, &l) in labels.iter().enumerate() {
                if l == FREE {
                    check(values[k].data()[i] == 0.0, || "a free element is non-zero after commit".into())?;
                }
            }
        }
    }
    Ok(transitions)
}
