use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use super::config::{Mode, RunConfig, TaskSettings};
use crate::backbone::{Access, BackboneParams, WeightPlan};
use crate::continual::{
    advance_lifecycle, audit_transition, check_ratio, compose_task_weights, compute_prune_mask, inference_plan,
    LifecycleEvent, OwnershipMap, PruneDecision, TaskRegistry, TaskState, FREE,
};
use crate::data::{ContinualDataset, DatasetSplits, SplitName};
use crate::error::{Error, Result};
use crate::eval::{evaluate_task, MetricReport};
use crate::model::{backbone_prefix, head_bias_name, head_weight_name, Model};
use crate::numerics::Tensor;
use crate::task::{TaskId, TaskKind};

/// Complete state of a continual run: configuration, parameters, task
/// registry, ownership labels, optimiser moments and the random stream.
#[derive(Clone, Debug)]
pub struct Learner {
    pub config: RunConfig,
    pub model: Model,
    pub registry: TaskRegistry,
    /// Present in conure mode only.
    pub ownership: Option<OwnershipMap>,
    pub optimizer: AdamState,
    pub rng: ChaCha8Rng,
}

/// Ownership map with every prunable tensor of the first backbone free.
pub fn fresh_ownership(model: &Model, embedding_pruning: bool) -> OwnershipMap {
    let mut own = OwnershipMap::new();
    let prefix = backbone_prefix(0);
    model.backbones[0].visit(&mut |name, kind, t| {
        if kind.is_prunable(embedding_pruning) {
            own.insert_free(format!("{prefix}{name}"), t.len());
        }
    });
    own
}

impl Learner {
    pub fn new(config: RunConfig, num_items: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        let model = Model::new(config.backbone.clone(), num_items, &mut rng)?;
        let ownership =
            (config.train.mode == Mode::Conure).then(|| fresh_ownership(&model, config.train.embedding_pruning));
        Ok(Learner {
            config,
            model,
            registry: TaskRegistry::new(),
            ownership,
            optimizer: AdamState::new(),
            rng,
        })
    }

    pub fn mode(&self) -> Mode {
        self.config.train.mode
    }

    pub fn settings(&self, task: TaskId) -> Result<TaskSettings> {
        Ok(self.config.settings(task, self.registry.position(task)?))
    }

    pub fn first_task(&self) -> Result<TaskId> {
        self.registry
            .first()
            .ok_or_else(|| Error::Registry("no task has been registered".into()))
    }

    /// Registers `task`, gives it a head and routes it to a backbone
    /// according to the mode.
    pub fn begin_task(&mut self, task: TaskId, kind: TaskKind, labels: usize) -> Result<()> {
        let position = self.registry.len();
        if (position == 0) != (kind == TaskKind::Autoregressive) {
            return Err(Error::Config(
                "the first task must be the autoregressive sequence task, and only the first".into(),
            ));
        }
        if kind == TaskKind::Autoregressive && labels != self.model.num_items() + 1 {
            return Err(Error::Config(format!(
                "sequence task label space must be {} (items plus pad), got {labels}",
                self.model.num_items() + 1
            )));
        }
        let ratio = match self.mode() {
            Mode::Conure => self.config.settings(task, position).prune_ratio,
            _ => None,
        };
        self.registry.register(task, kind, labels, ratio)?;
        let backbone = match self.mode() {
            Mode::Sinmo if position > 0 => {
                let fresh = BackboneParams::init(&self.config.backbone, self.model.num_items(), &mut self.rng)?;
                self.model.backbones.push(fresh);
                self.model.backbones.len() - 1
            }
            Mode::Fineall if position > 0 => {
                let copy = self.model.backbones[0].clone();
                self.model.backbones.push(copy);
                self.model.backbones.len() - 1
            }
            _ => 0,
        };
        self.model.add_head(task, labels, backbone, &mut self.rng)?;
        self.optimizer.reset();
        if let (Some(scale), Some(own), true) = (self.config.train.reinit_free, &self.ownership, position > 0) {
            let rng = &mut self.rng;
            for (name, labels) in own.iter() {
                self.model.with_param_mut(name, |t| {
                    for (v, &l) in t.data_mut().iter_mut().zip(labels) {
                        if l == FREE {
                            *v = rng.gen_range(-scale..scale);
                        }
                    }
                });
            }
        }
        Ok(())
    }

    /// Which tensors, and which of their elements, `task` may update in
    /// its current lifecycle state.
    pub fn training_plan(&self, task: TaskId) -> Result<WeightPlan> {
        let position = self.registry.position(task)?;
        let state = self.registry.state(task)?;
        if state == TaskState::Committed {
            return Err(Error::Lifecycle {
                task: task.0,
                expected: TaskState::Training.to_string(),
                actual: state.to_string(),
            });
        }
        let mut plan = WeightPlan::new();
        plan.set(head_weight_name(task), Access::Trainable);
        plan.set(head_bias_name(task), Access::Trainable);
        let bb = self.model.backbone_index(task)?;
        let prefix = backbone_prefix(bb);
        let mut names = Vec::new();
        self.model.backbones[bb].visit(&mut |name, _, _| names.push(format!("{prefix}{name}")));
        match self.mode() {
            Mode::Conure => {
                let own = self.ownership.as_ref().ok_or_else(|| Error::Config("conure run without ownership map".into()))?;
                for name in names {
                    if own.contains(&name) {
                        let z = self.model.param(&name).expect("visited name exists");
                        let composed = compose_task_weights(&z, own.labels(&name)?, &self.registry, task)?;
                        plan.set(name, Access::Partial(composed.trainable));
                    } else if position == 0 {
                        plan.set(name, Access::Trainable);
                    }
                }
            }
            Mode::Finesmax if position > 0 => {}
            Mode::Mtl if position > 0 => {
                let first = self.first_task()?;
                plan.set(head_weight_name(first), Access::Trainable);
                plan.set(head_bias_name(first), Access::Trainable);
                for name in names {
                    plan.set(name, Access::Trainable);
                }
            }
            _ => {
                for name in names {
                    plan.set(name, Access::Trainable);
                }
            }
        }
        Ok(plan)
    }

    pub fn inference_plan(&self, task: TaskId) -> Result<WeightPlan> {
        inference_plan(&self.model, &self.registry, self.ownership.as_ref(), task)
    }

    pub fn evaluate(
        &self,
        dataset: &ContinualDataset,
        splits: &DatasetSplits,
        task: TaskId,
        split: SplitName,
    ) -> Result<MetricReport> {
        evaluate_task(
            &self.model,
            &self.registry,
            self.ownership.as_ref(),
            dataset,
            splits,
            task,
            split,
            self.config.train.max_eval,
        )
    }

    /// One Adam step over the named gradients, honouring the plan's masks.
    pub fn apply_gradients(&mut self, grads: &BTreeMap<String, Tensor>, plan: &WeightPlan, lr: f64) -> Result<()> {
        self.optimizer.advance();
        for (name, g) in grads {
            let Some(mask) = plan.trainable_mask(name) else {
                continue;
            };
            let mut outcome = Ok(());
            let optimizer = &mut self.optimizer;
            let found = self.model.with_param_mut(name, |t| {
                outcome = optimizer.update(name, t, g.data(), mask, lr);
            });
            if !found {
                return Err(Error::Contract(format!("gradient for unknown tensor `{name}`")));
            }
            outcome?;
        }
        Ok(())
    }

    fn require_conure(&self, what: &str) -> Result<&OwnershipMap> {
        match (&self.ownership, self.mode()) {
            (Some(own), Mode::Conure) => Ok(own),
            _ => Err(Error::Config(format!("{what} is only defined in conure mode, run mode is {}", self.mode()))),
        }
    }

    /// Frees the smallest-magnitude share of `task`'s elements in every
    /// prunable tensor, zeroes them and labels the survivors as owned by
    /// `task`. `ratio` replaces the configured ratio.
    pub fn prune(&mut self, task: TaskId, ratio: Option<f64>) -> Result<Vec<(String, PruneDecision)>> {
        let before = self.require_conure("prune")?.clone();
        self.registry.require_state(task, TaskState::Training)?;
        if let Some(q) = ratio {
            check_ratio(q)?;
            self.registry.get_mut(task)?.prune_ratio = Some(q);
        }
        let q = self.registry.get(task)?.prune_ratio.ok_or_else(|| {
            Error::Config(format!("no prune ratio configured for {task}; pass one explicitly"))
        })?;
        let mut decisions = Vec::new();
        let mut after = before.clone();
        for (name, labels) in before.iter() {
            let candidates: Vec<bool> = labels.iter().map(|&l| l == FREE).collect();
            let z = self.model.param(name).expect("ownership names exist in the model");
            let decision = compute_prune_mask(z.data(), &candidates, q)?;
            self.model.with_param_mut(name, |t| {
                let data = t.data_mut();
                for &i in &decision.freed {
                    data[i] = 0.0;
                }
            });
            after.claim_survivors(name, &decision, task)?;
            decisions.push((name.to_string(), decision));
        }
        advance_lifecycle(&mut self.registry, task, LifecycleEvent::FinishTrain)?;
        audit_transition(&before, &after, &self.registry)?;
        self.ownership = Some(after);
        Ok(decisions)
    }

    /// Moves a pruned task into retraining and clears optimiser moments.
    pub fn start_retrain(&mut self, task: TaskId) -> Result<()> {
        self.require_conure("retrain")?;
        advance_lifecycle(&mut self.registry, task, LifecycleEvent::FinishPrune)?;
        self.optimizer.reset();
        Ok(())
    }

    /// Commits `task`. A conure task without a prune ratio takes every
    /// remaining free element.
    pub fn commit(&mut self, task: TaskId) -> Result<()> {
        let before = self.ownership.clone();
        let desc = self.registry.get(task)?.clone();
        match desc.state {
            TaskState::Training if desc.prune_ratio.is_some() => {
                return Err(Error::Lifecycle {
                    task: task.0,
                    expected: TaskState::Retraining.to_string(),
                    actual: desc.state.to_string(),
                })
            }
            TaskState::Training => {
                advance_lifecycle(&mut self.registry, task, LifecycleEvent::FinishTrain)?;
                if let Some(own) = self.ownership.as_mut() {
                    own.claim_all_free(task);
                }
            }
            _ => {
                advance_lifecycle(&mut self.registry, task, LifecycleEvent::FinishRetrain)?;
            }
        }
        if let (Some(b), Some(a)) = (before.as_ref(), self.ownership.as_ref()) {
            audit_transition(b, a, &self.registry)?;
        }
        Ok(())
    }
}
