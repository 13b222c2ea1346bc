use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::ContinualDataset;
use crate::error::{Error, Result};
use crate::task::TaskId;

/// Train/validation/test fractions and the shuffle seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.80,
            val: 0.05,
            test: 0.15,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("split fractions must lie in [0, 1]".into()));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must sum to 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" | "validation" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        })
    }
}

impl SplitIndices {
    pub fn get(&self, split: SplitName) -> &[usize] {
        match split {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

/// Shuffles `0..n` and cuts it into `round(val·n)` validation and
/// `round(test·n)` test indices; the rest train. Each part is sorted.
pub fn split_indices(n: usize, spec: &SplitSpec, stream: u64) -> Result<SplitIndices> {
    spec.validate()?;
    let n_val = (spec.val * n as f64).round() as usize;
    let n_test = (spec.test * n as f64).round() as usize;
    let n_train = n.saturating_sub(n_val + n_test);
    for (name, size, frac) in [("train", n_train, spec.train), ("val", n_val, spec.val), ("test", n_test, spec.test)] {
        if frac > 0.0 && size == 0 {
            return Err(Error::Data(format!("{n} instances leave the {name} split empty")));
        }
    }
    if n_val + n_test > n {
        return Err(Error::Data(format!("{n} instances cannot fill the requested splits")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    order.shuffle(&mut rng);
    let mut val = order[..n_val].to_vec();
    let mut test = order[n_val..n_val + n_test].to_vec();
    let mut train = order[n_val + n_test..].to_vec();
    val.sort_unstable();
    test.sort_unstable();
    train.sort_unstable();
    Ok(SplitIndices { train, val, test })
}

/// User-level split of the sequence task and instance-level splits of the
/// label tasks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplits {
    /// Indices into the dataset's users.
    pub sequences: SplitIndices,
    /// Indices into each label task's instances.
    pub tasks: BTreeMap<TaskId, SplitIndices>,
}

impl DatasetSplits {
    /// Split of the task: users for the sequence task, instances otherwise.
    pub fn for_task(&self, id: TaskId, first: TaskId) -> Result<&SplitIndices> {
        if id == first {
            return Ok(&self.sequences);
        }
        self.tasks
            .get(&id)
            .ok_or_else(|| Error::Data(format!("no split for task {id}")))
    }
}

/// Splits every task with `spec`, or with an override for that task.
pub fn split_dataset(
    dataset: &ContinualDataset,
    spec: &SplitSpec,
    overrides: &BTreeMap<TaskId, SplitSpec>,
) -> Result<DatasetSplits> {
    let pick = |id: TaskId| overrides.get(&id).unwrap_or(spec);
    let sequences = split_indices(dataset.num_users(), pick(TaskId(1)), 1)?;
    let mut tasks = BTreeMap::new();
    for task in &dataset.tasks {
        let s = split_indices(task.instances.len(), pick(task.id), u64::from(task.id.0))?;
        tasks.insert(task.id, s);
    }
    Ok(DatasetSplits { sequences, tasks })
}
