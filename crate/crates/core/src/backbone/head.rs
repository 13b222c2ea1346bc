use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::task::TaskId;

/// Task-specific affine prediction layer `h = g W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskHead {
    pub task: TaskId,
    /// `[f × |Y|]`
    pub weight: Tensor,
    /// `[|Y|]`
    pub bias: Tensor,
}

impl TaskHead {
    pub fn init<R: Rng + ?Sized>(task: TaskId, hidden: usize, labels: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (hidden as f64).sqrt();
        TaskHead {
            task,
            weight: Tensor::uniform(vec![hidden, labels], scale, rng),
            bias: Tensor::zeros(vec![labels]),
        }
    }

    pub fn labels(&self) -> usize {
        self.bias.len()
    }

    pub fn hidden(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Scores over the head's whole label space.
pub fn predict_scores(head: &TaskHead, g_last: &[f64]) -> Result<Vec<f64>> {
    let (f, labels) = head.weight.dims2("predict_scores")?;
    if g_last.len() != f {
        return Err(Error::dim("predict_scores", "hidden", f, g_last.len()));
    }
    let w = head.weight.data();
    let mut scores = head.bias.data().to_vec();
    for (r, &g) in g_last.iter().enumerate() {
        for (s, &wv) in scores.iter_mut().zip(&w[r * labels..(r + 1) * labels]) {
            *s += g * wv;
        }
    }
    Ok(scores)
}
