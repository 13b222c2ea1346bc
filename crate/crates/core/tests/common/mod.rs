#![allow(dead_code)]

pub mod fuzz;
pub mod gradients;
pub mod oracles;
pub mod setup;

use std::borrow::Cow;

use conure::numerics::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// Central-difference error against analytic gradients of
/// `Σ w ⊙ f(inputs)` for a fixed random `w`. Returns the largest
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-6)`.
pub fn max_gradient_error<F>(inputs: &[Tensor], seed: u64, f: F) -> f64
where
    F: for<'a> Fn(&mut Tape<'a>, &[Var]) -> Var,
{
    let weights: Vec<f64> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars);
        let mut r = rng(seed ^ 0x9e37);
        (0..tape.value(out).len()).map(|_| r.gen_range(-1.0..1.0)).collect()
    };
    let objective = |inputs: &[Tensor], grads: bool| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| if grads { tape.input(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        let out = f(&mut tape, &vars);
        let weighted = tape.mask_multiply(out, Cow::Borrowed(&weights)).expect("weights match output");
        let loss = tape.sum(weighted);
        let value = tape.value(loss).data()[0];
        if !grads {
            return (value, Vec::new());
        }
        let g = tape.backward(loss).expect("scalar loss");
        let per_input = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| g.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        (value, per_input)
    };
    let (_, analytic) = objective(inputs, true);
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (objective(&plus, false).0 - objective(&minus, false).0) / (2.0 * FD_STEP);
            let a = analytic[i][j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}
