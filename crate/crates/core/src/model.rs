//! Backbones plus task heads, addressed by flat parameter names.
//!
//! Backbone `k` owns names `bb{k}.<tensor>`; the head of task `t` owns
//! `head{t}.weight` and `head{t}.bias`.

use std::collections::BTreeMap;

use rand::Rng;

use crate::backbone::{predict_scores, BackboneConfig, BackboneParams, BoundBackbone, ParamKind, TaskHead, WeightPlan};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor};
use crate::task::TaskId;

/// Sequences encoded per tape during forward-only passes.
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: BackboneConfig,
    pub backbones: Vec<BackboneParams>,
    pub heads: BTreeMap<TaskId, TaskHead>,
    /// Backbone index serving each task.
    pub routing: BTreeMap<TaskId, usize>,
}

pub fn backbone_prefix(index: usize) -> String {
    format!("bb{index}.")
}

pub fn head_weight_name(task: TaskId) -> String {
    format!("head{}.weight", task.0)
}

pub fn head_bias_name(task: TaskId) -> String {
    format!("head{}.bias", task.0)
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: BackboneConfig, num_items: usize, rng: &mut R) -> Result<Self> {
        let backbone = BackboneParams::init(&config, num_items, rng)?;
        Ok(Model {
            config,
            backbones: vec![backbone],
            heads: BTreeMap::new(),
            routing: BTreeMap::new(),
        })
    }

    pub fn num_items(&self) -> usize {
        self.backbones[0].num_items()
    }

    pub fn backbone_index(&self, task: TaskId) -> Result<usize> {
        self.routing
            .get(&task)
            .copied()
            .ok_or_else(|| Error::Registry(format!("task {task} has no backbone")))
    }

    pub fn head(&self, task: TaskId) -> Result<&TaskHead> {
        self.heads
            .get(&task)
            .ok_or_else(|| Error::Registry(format!("task {task} has no prediction head")))
    }

    pub fn add_head<R: Rng + ?Sized>(&mut self, task: TaskId, labels: usize, backbone: usize, rng: &mut R) -> Result<()> {
        if self.heads.contains_key(&task) {
            return Err(Error::Registry(format!("task {task} already has a head")));
        }
        if backbone >= self.backbones.len() {
            return Err(Error::Registry(format!("backbone {backbone} does not exist")));
        }
        self.heads.insert(task, TaskHead::init(task, self.config.hidden, labels, rng));
        self.routing.insert(task, backbone);
        Ok(())
    }

    /// Every tensor with its flat name, in a fixed order.
    pub fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor)) {
        for (k, bb) in self.backbones.iter().enumerate() {
            let prefix = backbone_prefix(k);
            bb.visit(&mut |name, kind, t| f(&format!("{prefix}{name}"), kind, t));
        }
        for (&task, head) in &self.heads {
            f(&head_weight_name(task), ParamKind::HeadWeight, &head.weight);
            f(&head_bias_name(task), ParamKind::HeadBias, &head.bias);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor)) {
        for (k, bb) in self.backbones.iter_mut().enumerate() {
            let prefix = backbone_prefix(k);
            bb.visit_mut(&mut |name, kind, t| f(&format!("{prefix}{name}"), kind, t));
        }
        for (&task, head) in self.heads.iter_mut() {
            f(&head_weight_name(task), ParamKind::HeadWeight, &mut head.weight);
            f(&head_bias_name(task), ParamKind::HeadBias, &mut head.bias);
        }
    }

    pub fn param_names(&self) -> Vec<(String, ParamKind)> {
        let mut out = Vec::new();
        self.visit(&mut |n, k, _| out.push((n.to_string(), k)));
        out
    }

    pub fn param(&self, name: &str) -> Option<Tensor> {
        let mut found = None;
        self.visit(&mut |n, _, t| {
            if n == name {
                found = Some(t.clone());
            }
        });
        found
    }

    /// Applies `f` to the tensor called `name`. Returns `false` if it does not exist.
    pub fn with_param_mut(&mut self, name: &str, f: impl FnOnce(&mut Tensor)) -> bool {
        let mut f = Some(f);
        self.visit_mut(&mut |n, _, t| {
            if n == name {
                if let Some(f) = f.take() {
                    f(t);
                }
            }
        });
        f.is_none()
    }

    /// `g_{n-1}` for each window, using the backbone serving `task` bound
    /// through `plan`. No gradients are recorded.
    pub fn last_hidden(&self, task: TaskId, plan: &WeightPlan, windows: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let bb = self.backbone_index(task)?;
        let prefix = backbone_prefix(bb);
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(EVAL_CHUNK) {
            let mut tape = Tape::new();
            let bound = BoundBackbone::bind(&mut tape, &self.backbones[bb], &prefix, plan)?;
            for ids in chunk {
                let e = bound.encode(&mut tape, ids)?;
                out.push(tape.value(e).row(ids.len() - 1).to_vec());
            }
        }
        Ok(out)
    }

    /// Full label-space scores of `task` for each window.
    pub fn task_scores(&self, task: TaskId, plan: &WeightPlan, windows: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let head = self.head(task)?;
        self.last_hidden(task, plan, windows)?
            .iter()
            .map(|g| predict_scores(head, g))
            .collect()
    }
}
