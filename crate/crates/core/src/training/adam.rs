use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moments of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam with bias correction. Moments are created on first use and keyed
/// by parameter name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// Starts a new optimisation step; bias corrections use the new count.
    pub fn advance(&mut self) {
        self.step += 1;
    }

    /// Updates `param` in place. Elements whose `mask` entry is `false`
    /// keep their value and moments bit for bit.
    pub fn update(&mut self, name: &str, param: &mut Tensor, grad: &[f64], mask: Option<&[bool]>, lr: f64) -> Result<()> {
        let n = param.len();
        if grad.len() != n {
            return Err(Error::Contract(format!("gradient of `{name}` has {} elements, parameter has {n}", grad.len())));
        }
        if mask.is_some_and(|m| m.len() != n) {
            return Err(Error::Contract(format!("mask of `{name}` does not match its parameter")));
        }
        if self.step == 0 {
            return Err(Error::Contract("adam update before the first step".into()));
        }
        let mom = self.moments.entry(name.to_string()).or_insert_with(|| Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        if mom.m.len() != n {
            return Err(Error::Contract(format!("moments of `{name}` do not match its parameter")));
        }
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let data = param.data_mut();
        for i in 0..n {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let g = grad[i];
            mom.m[i] = BETA1 * mom.m[i] + (1.0 - BETA1) * g;
            mom.v[i] = BETA2 * mom.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = mom.m[i] / c1;
            let v_hat = mom.v[i] / c2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = AdamState::new();
        s.advance();
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        s.update("p", &mut p, &[0.0, 0.0], None, 0.1).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn masked_elements_are_untouched() {
        let mut s = AdamState::new();
        s.advance();
        let mut p = Tensor::vector(vec![1.0, 1.0]);
        s.update("p", &mut p, &[3.0, 3.0], Some(&[false, true]), 0.1).unwrap();
        assert_eq!(p.data()[0], 1.0);
        assert_ne!(p.data()[1], 1.0);
        assert_eq!(s.moments["p"].m[0], 0.0);
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let mut s = AdamState::new();
        s.advance();
        let mut p = Tensor::vector(vec![1.0]);
        assert!(matches!(s.update("p", &mut p, &[1.0, 2.0], None, 0.1), Err(Error::Contract(_))));
    }
}
