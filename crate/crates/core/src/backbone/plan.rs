use std::borrow::Cow;
use std::collections::HashMap;

use crate::error::Result;
use crate::numerics::{Tape, Tensor, Var};

/// How one parameter tensor enters a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum Access {
    /// Used as stored, receives no gradient.
    Frozen,
    /// Used as stored, every element receives a gradient.
    Trainable,
    /// Used as stored; only elements flagged `true` receive a gradient.
    Partial(Vec<bool>),
    /// Replaced by the given tensor, receives no gradient.
    Override(Tensor),
}

/// Per-parameter access rules for one forward pass. Parameters without an
/// entry are frozen.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightPlan {
    entries: HashMap<String, Access>,
}

impl WeightPlan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: impl Into<String>, access: Access) {
        self.entries.insert(name.into(), access);
    }

    pub fn get(&self, name: &str) -> &Access {
        self.entries.get(name).unwrap_or(&Access::Frozen)
    }

    /// `None` when the tensor gets no update at all, `Some(None)` when all
    /// elements train, `Some(Some(mask))` for partial training.
    pub fn trainable_mask(&self, name: &str) -> Option<Option<&[bool]>> {
        match self.get(name) {
            Access::Trainable => Some(None),
            Access::Partial(mask) => Some(Some(mask)),
            Access::Frozen | Access::Override(_) => None,
        }
    }

    pub fn trainable_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self
            .entries
            .iter()
            .filter(|(_, a)| matches!(a, Access::Trainable | Access::Partial(_)))
            .map(|(n, _)| n.as_str())
            .collect();
        names.sort_unstable();
        names
    }

    /// Records the tensor named `name` on the tape according to its access rule.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, name: &str, value: &'a Tensor) -> Result<Var> {
        match self.get(name) {
            Access::Frozen => Ok(tape.constant_ref(value)),
            Access::Trainable => Ok(tape.param(name, value)),
            Access::Partial(mask) => {
                let leaf = tape.param(name, value);
                tape.stop_gradient_except(leaf, Cow::Borrowed(mask))
            }
            Access::Override(t) => Ok(tape.constant_ref(t)),
        }
    }
}
