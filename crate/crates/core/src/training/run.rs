use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::Mode;
use super::learner::Learner;
use super::losses::{
    autoregressive_loss, bpr_loss, class_nll, mean, shift_for_next_item, weight_penalty, BoundHead,
};
use super::sampler::PopularitySampler;
use crate::backbone::BoundBackbone;
use crate::continual::TaskState;
use crate::data::{ContinualDataset, DatasetSplits, Instance, SplitName};
use crate::error::{Error, Result};
use crate::eval::{eval_set, evaluate_set, EvalSet};
use crate::model::{backbone_prefix, head_bias_name, head_weight_name};
use crate::numerics::Tape;
use crate::task::{TaskId, TaskKind};

/// One line of training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub task: TaskId,
    pub phase: Phase,
    pub step: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Retrain,
}

/// Writes records as JSON lines.
pub fn write_history<W: Write>(out: &mut W, records: &[HistoryRecord]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Outcome of one training or retraining phase.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSummary {
    pub task: TaskId,
    pub phase: Phase,
    pub steps: usize,
    /// Best validation metric, whose parameters were kept.
    pub best: f64,
    pub history: Vec<HistoryRecord>,
}

/// Dataset plus its splits, with per-task samplers built on demand.
pub struct TaskData<'a> {
    pub dataset: &'a ContinualDataset,
    pub splits: &'a DatasetSplits,
}

impl<'a> TaskData<'a> {
    pub fn new(dataset: &'a ContinualDataset, splits: &'a DatasetSplits) -> Self {
        TaskData { dataset, splits }
    }

    fn train_instances(&self, task: TaskId) -> Result<Vec<Instance>> {
        let t = self.dataset.task(task)?;
        let idx = &self.splits.for_task(task, TaskId(1))?.train;
        Ok(idx.iter().map(|&i| t.instances[i]).collect())
    }

    fn popularity(&self, task: TaskId, exponent: f64) -> Result<PopularitySampler> {
        let t = self.dataset.task(task)?;
        let train = self.train_instances(task)?;
        PopularitySampler::from_occurrences(train.iter().map(|i| i.label as usize), t.num_labels(), exponent)
    }
}

/// Per-phase batch sources.
struct Sources {
    train_users: Vec<usize>,
    instances: Vec<Instance>,
    sampler: Option<PopularitySampler>,
}

fn sources(learner: &Learner, data: &TaskData<'_>, task: TaskId, kind: TaskKind) -> Result<Sources> {
    let first = learner.first_task()?;
    let train_users = data.splits.for_task(first, first)?.train.clone();
    if kind == TaskKind::Autoregressive {
        return Ok(Sources {
            train_users,
            instances: Vec::new(),
            sampler: None,
        });
    }
    let instances = data.train_instances(task)?;
    if instances.is_empty() {
        return Err(Error::Data(format!("{task} has no training instances")));
    }
    let sampler = match kind {
        TaskKind::Ranking => Some(data.popularity(task, learner.config.train.popularity_exponent)?),
        _ => None,
    };
    Ok(Sources {
        train_users,
        instances,
        sampler,
    })
}

/// One optimisation step of `task` on a freshly drawn batch. Returns the
/// batch loss, or `None` when the batch held no usable position.
#[allow(clippy::too_many_arguments)]
fn step_task(
    learner: &mut Learner,
    data: &TaskData<'_>,
    src: &Sources,
    task: TaskId,
    kind: TaskKind,
    batch: usize,
    lr: f64,
    plan: &crate::backbone::WeightPlan,
) -> Result<Option<f64>> {
    let cfg = learner.config.train.clone();
    let bb = learner.model.backbone_index(task)?;
    let prefix = backbone_prefix(bb);
    let ds = data.dataset;
    // Draw everything random up front so the tape can borrow the model.
    enum Item {
        Sequence(Vec<usize>),
        Pair(Vec<usize>, usize, usize),
        Labelled(Vec<usize>, usize),
    }
    let mut items = Vec::with_capacity(batch);
    let mut sampled = Vec::new();
    match kind {
        TaskKind::Autoregressive => {
            if src.train_users.is_empty() {
                return Err(Error::Data("sequence task has no training users".into()));
            }
            let v = ds.num_items();
            let k = ((cfg.sampled_softmax_ratio * v as f64).round() as usize).clamp(1, v);
            sampled = sample(&mut learner.rng, v, k).into_iter().map(|i| i + 1).collect();
            sampled.sort_unstable();
            for _ in 0..batch {
                let u = src.train_users[learner.rng.gen_range(0..src.train_users.len())];
                items.push(Item::Sequence(ds.window_of(u as u32)));
            }
        }
        TaskKind::Ranking => {
            let sampler = src.sampler.as_ref().expect("ranking tasks carry a sampler");
            for _ in 0..batch {
                let inst = src.instances[learner.rng.gen_range(0..src.instances.len())];
                let neg = sampler.sample_other(inst.label as usize, cfg.negative_retries, &mut learner.rng)?;
                items.push(Item::Pair(ds.window_of(inst.user), inst.label as usize, neg));
            }
        }
        TaskKind::Classification => {
            for _ in 0..batch {
                let inst = src.instances[learner.rng.gen_range(0..src.instances.len())];
                items.push(Item::Labelled(ds.window_of(inst.user), inst.label as usize));
            }
        }
    }

    let grads = {
        let mut tape = Tape::new();
        let model = &learner.model;
        let bound = BoundBackbone::bind(&mut tape, &model.backbones[bb], &prefix, plan)?;
        let head = model.head(task)?;
        let head = BoundHead {
            weight: plan.bind(&mut tape, &head_weight_name(task), &head.weight)?,
            bias: plan.bind(&mut tape, &head_bias_name(task), &head.bias)?,
        };
        let mut terms = Vec::with_capacity(items.len());
        for item in &items {
            match item {
                Item::Sequence(window) => {
                    let (input, targets) = shift_for_next_item(window);
                    let e = bound.encode(&mut tape, &input)?;
                    if let Some(l) = autoregressive_loss(&mut tape, e, head, &targets, &sampled)? {
                        terms.push(l);
                    }
                }
                Item::Pair(window, pos, neg) => {
                    let g = bound.encode_last(&mut tape, window)?;
                    terms.push(bpr_loss(&mut tape, g, head, *pos, *neg, cfg.l2)?);
                }
                Item::Labelled(window, label) => {
                    let g = bound.encode_last(&mut tape, window)?;
                    terms.push(class_nll(&mut tape, g, head, *label)?);
                }
            }
        }
        if terms.is_empty() {
            log::warn!("{task}: batch has no position with a target, skipped");
            return Ok(None);
        }
        let mut loss = mean(&mut tape, &terms)?;
        if kind == TaskKind::Classification && cfg.l2 > 0.0 {
            let reg = weight_penalty(&mut tape, head, cfg.l2);
            loss = tape.add(loss, reg)?;
        }
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Contract(format!("{task}: loss became {value}")));
        }
        (value, tape.backward(loss)?.into_named())
    };
    learner.apply_gradients(&grads.1, plan, lr)?;
    Ok(Some(grads.0))
}

fn record(history: &mut Vec<HistoryRecord>, task: TaskId, phase: Phase, step: usize, split: &str, metric: &str, value: f64) {
    history.push(HistoryRecord {
        task,
        phase,
        step,
        split: split.to_string(),
        metric: metric.to_string(),
        value,
    });
}

fn validation(learner: &Learner, set: &EvalSet) -> Result<f64> {
    Ok(evaluate_set(&learner.model, &learner.registry, learner.ownership.as_ref(), set, SplitName::Val)?.value)
}

/// Runs `steps` optimisation steps (the configured budget when `None`),
/// evaluating on validation every `eval_every` steps, and keeps the
/// parameters of the best evaluation. With `target` set, stops as soon as
/// validation reaches it.
fn optimise(
    learner: &mut Learner,
    data: &TaskData<'_>,
    task: TaskId,
    phase: Phase,
    steps: usize,
    target: Option<f64>,
) -> Result<PhaseSummary> {
    let desc = learner.registry.get(task)?.clone();
    let settings = learner.settings(task)?;
    let plan = learner.training_plan(task)?;
    let val = eval_set(data.dataset, data.splits, task, SplitName::Val, learner.config.train.max_eval)?;
    let src = sources(learner, data, task, desc.kind)?;
    let alternate = learner.mode() == Mode::Mtl && learner.registry.position(task)? > 0;
    let first = learner.first_task()?;
    let first_src = if alternate {
        Some(sources(learner, data, first, TaskKind::Autoregressive)?)
    } else {
        None
    };
    let first_batch = learner.config.settings(first, 0).batch;

    let mut history = Vec::new();
    let mut best = validation(learner, &val)?;
    record(&mut history, task, phase, 0, "val", desc.kind.metric_name(), best);
    let mut best_model = learner.model.clone();
    let reached = |v: f64| target.is_some_and(|t| v >= t);
    let mut done = 0;
    if !reached(best) {
        for step in 1..=steps {
            let loss = if alternate && step % 2 == 1 {
                step_task(learner, data, first_src.as_ref().unwrap(), first, TaskKind::Autoregressive, first_batch, settings.lr, &plan)?
            } else {
                step_task(learner, data, &src, task, desc.kind, settings.batch, settings.lr, &plan)?
            };
            if let Some(l) = loss {
                record(&mut history, task, phase, step, "train", "loss", l);
            }
            done = step;
            if step % learner.config.train.eval_every == 0 || step == steps {
                let v = validation(learner, &val)?;
                record(&mut history, task, phase, step, "val", desc.kind.metric_name(), v);
                log::info!("{task} {phase:?} step {step}: val {} = {v:.4}", desc.kind.metric_name());
                if v > best {
                    best = v;
                    best_model = learner.model.clone();
                }
                if reached(v) {
                    break;
                }
            }
        }
    }
    learner.model = best_model;
    Ok(PhaseSummary {
        task,
        phase,
        steps: done,
        best,
        history,
    })
}

/// Trains `task` in its first phase and records its best validation
/// metric in the registry.
pub fn run_task_training(learner: &mut Learner, data: &TaskData<'_>, task: TaskId, steps: Option<usize>) -> Result<PhaseSummary> {
    learner.registry.require_state(task, TaskState::Training)?;
    let steps = steps.unwrap_or(learner.settings(task)?.steps);
    let summary = optimise(learner, data, task, Phase::Train, steps, None)?;
    learner.registry.get_mut(task)?.best_metric = Some(summary.best);
    Ok(summary)
}

/// Retrains the surviving elements of a pruned task until validation is
/// within the configured tolerance of its pre-prune best, or the budget
/// runs out. Leaves the task in `Retraining`, ready to commit.
pub fn retrain_after_prune(learner: &mut Learner, data: &TaskData<'_>, task: TaskId, steps: Option<usize>) -> Result<PhaseSummary> {
    learner.registry.require_state(task, TaskState::Pruned)?;
    learner.start_retrain(task)?;
    let steps = steps.unwrap_or(learner.settings(task)?.retrain_steps);
    let target = learner
        .registry
        .get(task)?
        .best_metric
        .map(|b| (1.0 - learner.config.train.retrain_tolerance) * b);
    optimise(learner, data, task, Phase::Retrain, steps, target)
}

/// Label-space size of a task in `dataset`; the sequence task scores every
/// item plus the pad id.
pub fn label_space(dataset: &ContinualDataset, task: TaskId) -> Result<(TaskKind, usize)> {
    if task == TaskId(1) {
        return Ok((TaskKind::Autoregressive, dataset.num_items() + 1));
    }
    let t = dataset.task(task)?;
    Ok((t.kind, t.num_labels()))
}

/// Registers `task` and runs its whole lifecycle: training, then prune and
/// retrain when the mode and configuration ask for it, then commit.
pub fn run_task(learner: &mut Learner, data: &TaskData<'_>, task: TaskId) -> Result<Vec<PhaseSummary>> {
    let (kind, labels) = label_space(data.dataset, task)?;
    learner.begin_task(task, kind, labels)?;
    let mut phases = vec![run_task_training(learner, data, task, None)?];
    if learner.registry.get(task)?.prune_ratio.is_some() {
        learner.prune(task, None)?;
        phases.push(retrain_after_prune(learner, data, task, None)?);
    }
    learner.commit(task)?;
    Ok(phases)
}
