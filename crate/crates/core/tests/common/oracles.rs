//! Independent reference implementations compared against the library.

use conure::continual::compute_prune_mask;
use conure::eval::mrr_at_n;
use conure::numerics::{Tape, Tensor};
use conure::training::PopularitySampler;
use rand::Rng;

use super::{random, rng};

/// Convolution by explicit zero padding and direct summation.
pub fn conv_reference(x: &Tensor, w: &Tensor, b: &Tensor, dilation: usize) -> Vec<f64> {
    let (n, f_in) = (x.shape()[0], x.shape()[1]);
    let (k, f_out) = (w.shape()[0], w.shape()[2]);
    let pad = (k - 1) * dilation;
    let mut padded = vec![vec![0.0; f_in]; pad];
    padded.extend((0..n).map(|t| x.row(t).to_vec()));
    let mut out = Vec::with_capacity(n * f_out);
    for t in 0..n {
        for o in 0..f_out {
            let mut s = b.data()[o];
            for j in 0..k {
                for i in 0..f_in {
                    s += padded[t + j * dilation][i] * w.data()[(j * f_in + i) * f_out + o];
                }
            }
            out.push(s);
        }
    }
    out
}

/// Largest absolute gap between the tape convolution and the reference
/// over randomized shapes and dilations.
pub fn conv_max_gap(trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = r.gen_range(1..10);
        let f_in = r.gen_range(1..5);
        let f_out = r.gen_range(1..5);
        let k = r.gen_range(1..4);
        let d = r.gen_range(1..5);
        let x = random(vec![n, f_in], &mut r);
        let w = random(vec![k, f_in, f_out], &mut r);
        let b = random(vec![f_out], &mut r);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
        let y = tape.causal_conv1d(xv, wv, bv, d).unwrap();
        for (a, e) in tape.value(y).data().iter().zip(conv_reference(&x, &w, &b, d)) {
            worst = worst.max((a - e).abs());
        }
    }
    worst
}

/// Reciprocal rank by fully sorting ids on (score desc, id asc).
pub fn mrr_reference(scores: &[f64], target: usize, n: usize) -> f64 {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let rank = ids.iter().position(|&i| i == target).unwrap() + 1;
    if rank <= n {
        1.0 / rank as f64
    } else {
        0.0
    }
}

/// Count of randomized instances, many with ties, where the library
/// disagrees with the full-sort reference.
pub fn mrr_mismatches(trials: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    let mut bad = 0;
    for _ in 0..trials {
        let len = r.gen_range(1..30);
        let levels = r.gen_range(1..8);
        let scores: Vec<f64> = (0..len).map(|_| r.gen_range(0..levels) as f64 * 0.5).collect();
        let target = r.gen_range(0..len);
        let n = r.gen_range(1..8);
        if mrr_at_n(&scores, target, n).unwrap() != mrr_reference(&scores, target, n) {
            bad += 1;
        }
    }
    bad
}

/// Freed indices by sorting candidates on (|v|, index) and taking the
/// first `round(q · h)`.
pub fn prune_reference(values: &[f64], candidates: &[bool], q: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).filter(|&i| candidates[i]).collect();
    idx.sort_by(|&a, &b| values[a].abs().partial_cmp(&values[b].abs()).unwrap().then(a.cmp(&b)));
    let h = idx.len();
    let count = (q * h as f64).round() as usize;
    let mut freed = idx[..count].to_vec();
    freed.sort_unstable();
    freed
}

pub fn prune_mismatches(trials: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    let mut bad = 0;
    for _ in 0..trials {
        let len = r.gen_range(0..40);
        // Quantised magnitudes and signs force frequent ties.
        let values: Vec<f64> = (0..len)
            .map(|_| r.gen_range(-4i32..=4) as f64 * 0.25)
            .collect();
        let candidates: Vec<bool> = (0..len).map(|_| r.gen_bool(0.7)).collect();
        let q = [0.0, 0.25, 0.5, 0.7, 0.8, 0.9, 0.33][r.gen_range(0..7)];
        let got = compute_prune_mask(&values, &candidates, q).unwrap();
        if got.freed != prune_reference(&values, &candidates, q) {
            bad += 1;
        }
    }
    bad
}

/// Largest absolute gap between empirical and closed-form probabilities
/// over `draws` samples of a `freq^α` sampler.
pub fn sampler_max_gap(freqs: &[u64], alpha: f64, draws: usize, seed: u64) -> f64 {
    let table: Vec<(usize, u64)> = freqs.iter().copied().enumerate().collect();
    let s = PopularitySampler::new(&table, alpha, None).unwrap();
    let z: f64 = freqs.iter().map(|&c| (c as f64).powf(alpha)).sum();
    let mut hits = vec![0usize; freqs.len()];
    let mut r = rng(seed);
    for _ in 0..draws {
        hits[s.sample(&mut r)] += 1;
    }
    freqs
        .iter()
        .zip(&hits)
        .map(|(&c, &h)| ((c as f64).powf(alpha) / z - h as f64 / draws as f64).abs())
        .fold(0.0, f64::max)
}
