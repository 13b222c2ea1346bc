use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::task::TaskId;

/// Training regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One shared backbone; each task trains only free elements, then
    /// prunes and retrains its own share.
    Conure,
    /// A fresh backbone per task.
    Sinmo,
    /// One backbone, every parameter trainable on every task.
    Sinmoall,
    /// Backbone frozen after the first task; later tasks train their head.
    Finesmax,
    /// Each later task fine-tunes its own copy of the first task's backbone.
    Fineall,
    /// Later tasks alternate batches with the first task on one backbone.
    Mtl,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Conure => "conure",
            Mode::Sinmo => "sinmo",
            Mode::Sinmoall => "sinmoall",
            Mode::Finesmax => "finesmax",
            Mode::Fineall => "fineall",
            Mode::Mtl => "mtl",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conure" => Ok(Mode::Conure),
            "sinmo" => Ok(Mode::Sinmo),
            "sinmoall" => Ok(Mode::Sinmoall),
            "finesmax" => Ok(Mode::Finesmax),
            "fineall" => Ok(Mode::Fineall),
            "mtl" => Ok(Mode::Mtl),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// Optimisation settings shared by every task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Learning rate of the first task.
    pub first_lr: f64,
    /// Learning rate of every later task.
    pub lr: f64,
    pub first_batch: usize,
    pub batch: usize,
    pub l2: f64,
    /// Fraction of the item vocabulary sampled per batch for the
    /// sequence task's softmax.
    pub sampled_softmax_ratio: f64,
    pub popularity_exponent: f64,
    /// Step budget of the first training phase of a task.
    pub steps: usize,
    pub eval_every: usize,
    pub retrain_steps: usize,
    /// Retraining stops once validation reaches `(1 - tolerance)` of the
    /// pre-prune best.
    pub retrain_tolerance: f64,
    /// Prune ratio by task position; positions past the end are not pruned.
    pub prune_ratios: Vec<f64>,
    /// When set, free elements are redrawn from `U(-s, s)` before a later
    /// task trains. Otherwise they start at zero.
    pub reinit_free: Option<f64>,
    pub embedding_pruning: bool,
    pub negative_retries: usize,
    /// Cap on validation instances scored per evaluation.
    pub max_eval: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Conure,
            seed: 0,
            first_lr: 0.001,
            lr: 0.0001,
            first_batch: 32,
            batch: 512,
            l2: 0.02,
            sampled_softmax_ratio: 0.2,
            popularity_exponent: 0.3,
            steps: 1000,
            eval_every: 100,
            retrain_steps: 500,
            retrain_tolerance: 0.01,
            prune_ratios: vec![0.7, 0.8, 0.9, 0.8, 0.9, 0.9],
            reinit_free: None,
            embedding_pruning: false,
            negative_retries: 100,
            max_eval: None,
        }
    }
}

/// Per-task replacements for [`TrainConfig`] values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskOverride {
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub steps: Option<usize>,
    pub retrain_steps: Option<usize>,
    pub prune_ratio: Option<f64>,
    pub split: Option<SplitSpec>,
}

/// Everything that determines a run, as read from a TOML file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub backbone: BackboneConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    /// Keyed by task number, e.g. `[tasks.3]`.
    pub tasks: BTreeMap<String, TaskOverride>,
}

/// Settings resolved for one task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSettings {
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub retrain_steps: usize,
    pub prune_ratio: Option<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(Error::file(path))?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.split.validate()?;
        let t = &self.train;
        for (name, v) in [("first_lr", t.first_lr), ("lr", t.lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if t.first_batch == 0 || t.batch == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if !(t.l2 >= 0.0 && t.l2.is_finite()) {
            return Err(Error::Config("l2 must be non-negative".into()));
        }
        if !(t.sampled_softmax_ratio > 0.0 && t.sampled_softmax_ratio <= 1.0) {
            return Err(Error::Config("sampled_softmax_ratio must lie in (0, 1]".into()));
        }
        if !(t.popularity_exponent >= 0.0 && t.popularity_exponent.is_finite()) {
            return Err(Error::Config("popularity_exponent must be non-negative".into()));
        }
        if t.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if !(0.0..1.0).contains(&t.retrain_tolerance) {
            return Err(Error::Config("retrain_tolerance must lie in [0, 1)".into()));
        }
        for &q in &t.prune_ratios {
            crate::continual::check_ratio(q)?;
        }
        if let Some(s) = t.reinit_free {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config("reinit_free must be positive".into()));
            }
        }
        for (key, o) in &self.tasks {
            key.parse::<u16>()
                .map_err(|_| Error::Config(format!("task override key `{key}` is not a task number")))?;
            if let Some(q) = o.prune_ratio {
                crate::continual::check_ratio(q)?;
            }
            if let Some(s) = &o.split {
                s.validate()?;
            }
            if o.lr.is_some_and(|v| !(v > 0.0 && v.is_finite())) || o.batch == Some(0) {
                return Err(Error::Config(format!("task {key}: lr and batch must be positive")));
            }
        }
        Ok(())
    }

    pub fn task_override(&self, task: TaskId) -> Option<&TaskOverride> {
        self.tasks.get(&task.0.to_string())
    }

    /// Resolved settings for `task` at zero-based `position` in task order.
    pub fn settings(&self, task: TaskId, position: usize) -> TaskSettings {
        let t = &self.train;
        let o = self.task_override(task).cloned().unwrap_or_default();
        let first = position == 0;
        TaskSettings {
            lr: o.lr.unwrap_or(if first { t.first_lr } else { t.lr }),
            batch: o.batch.unwrap_or(if first { t.first_batch } else { t.batch }),
            steps: o.steps.unwrap_or(t.steps),
            retrain_steps: o.retrain_steps.unwrap_or(t.retrain_steps),
            prune_ratio: o.prune_ratio.or_else(|| t.prune_ratios.get(position).copied()),
        }
    }

    pub fn split_overrides(&self) -> BTreeMap<TaskId, SplitSpec> {
        self.tasks
            .iter()
            .filter_map(|(k, o)| Some((TaskId(k.parse().ok()?), o.split?)))
            .collect()
    }
}
