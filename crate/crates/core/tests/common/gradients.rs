//! Finite-difference cases for every differentiable op and for whole
//! encoder passes.

use std::borrow::Cow;

use conure::backbone::{
    BackboneConfig, BoundAttention, BoundBackbone, BoundBlock, BoundConv, BoundLayerNorm, BoundResidual,
};
use conure::backbone::Architecture;
use conure::numerics::{Tensor, Var, LAYER_NORM_EPS};
use conure::training::{autoregressive_loss, bpr_loss, cross_entropy_loss, BoundHead};

use super::{max_gradient_error, random, rng};

pub type Case = (&'static str, fn() -> f64);

pub fn cases() -> Vec<Case> {
    vec![
        ("matmul", matmul),
        ("add", add),
        ("add_row_bias", add_row_bias),
        ("relu", relu),
        ("scale", scale),
        ("transpose", transpose),
        ("reshape", reshape),
        ("embedding_lookup", embedding_lookup),
        ("mask_multiply", mask_multiply),
        ("stop_gradient_except", stop_gradient_except),
        ("causal_conv1d", causal_conv1d),
        ("layer_norm", layer_norm),
        ("select_row", select_row),
        ("gather", gather),
        ("gather_columns", gather_columns),
        ("causal_softmax", causal_softmax),
        ("softmax_cross_entropy", softmax_cross_entropy),
        ("log_sigmoid", log_sigmoid),
        ("sum", sum),
        ("sum_squares", sum_squares),
        ("add_all", add_all),
        ("tcn_encoder", tcn_encoder),
        ("attention_encoder", attention_encoder),
        ("autoregressive_loss", next_item_loss),
        ("bpr_loss", pairwise_loss),
        ("cross_entropy_loss", class_loss),
    ]
}

pub fn run(name: &str) -> f64 {
    let (_, f) = cases().into_iter().find(|(n, _)| *n == name).expect("known case");
    f()
}

fn matmul() -> f64 {
    let mut r = rng(1);
    max_gradient_error(&[random(vec![3, 4], &mut r), random(vec![4, 2], &mut r)], 1, |t, v| {
        t.matmul(v[0], v[1]).unwrap()
    })
}

fn add() -> f64 {
    let mut r = rng(2);
    max_gradient_error(&[random(vec![2, 3], &mut r), random(vec![2, 3], &mut r)], 2, |t, v| {
        t.add(v[0], v[1]).unwrap()
    })
}

fn add_row_bias() -> f64 {
    let mut r = rng(3);
    max_gradient_error(&[random(vec![3, 2], &mut r), random(vec![2], &mut r)], 3, |t, v| {
        t.add_row_bias(v[0], v[1]).unwrap()
    })
}

fn relu() -> f64 {
    let mut r = rng(4);
    max_gradient_error(&[random(vec![4, 3], &mut r)], 4, |t, v| t.relu(v[0]))
}

fn scale() -> f64 {
    let mut r = rng(5);
    max_gradient_error(&[random(vec![5], &mut r)], 5, |t, v| t.scale(v[0], -1.7))
}

fn transpose() -> f64 {
    let mut r = rng(6);
    max_gradient_error(&[random(vec![2, 5], &mut r)], 6, |t, v| t.transpose(v[0]).unwrap())
}

fn reshape() -> f64 {
    let mut r = rng(7);
    max_gradient_error(&[random(vec![2, 6], &mut r)], 7, |t, v| {
        let x = t.reshape(v[0], vec![3, 4]).unwrap();
        let xt = t.transpose(x).unwrap();
        t.matmul(x, xt).unwrap()
    })
}

fn embedding_lookup() -> f64 {
    let mut r = rng(8);
    max_gradient_error(&[random(vec![5, 3], &mut r)], 8, |t, v| t.embedding_lookup(v[0], &[4, 0, 4, 2]).unwrap())
}

fn mask_multiply() -> f64 {
    let mut r = rng(9);
    max_gradient_error(&[random(vec![2, 3], &mut r)], 9, |t, v| {
        t.mask_multiply(v[0], Cow::Owned(vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0])).unwrap()
    })
}

fn stop_gradient_except() -> f64 {
    // The output ignores the frozen entries, so their numeric gradient is
    // zero as well.
    let mut r = rng(10);
    max_gradient_error(&[random(vec![2, 2], &mut r)], 10, |t, v| {
        let masked = t.stop_gradient_except(v[0], Cow::Owned(vec![true, false, false, true])).unwrap();
        let keep = t.mask_multiply(masked, Cow::Owned(vec![1.0, 0.0, 0.0, 1.0])).unwrap();
        t.matmul(keep, keep).unwrap()
    })
}

fn causal_conv1d() -> f64 {
    let mut r = rng(11);
    let inputs = [random(vec![6, 3], &mut r), random(vec![3, 3, 2], &mut r), random(vec![2], &mut r)];
    max_gradient_error(&inputs, 11, |t, v| t.causal_conv1d(v[0], v[1], v[2], 2).unwrap())
}

fn layer_norm() -> f64 {
    let mut r = rng(12);
    let inputs = [random(vec![3, 4], &mut r), random(vec![4], &mut r), random(vec![4], &mut r)];
    max_gradient_error(&inputs, 12, |t, v| t.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS).unwrap())
}

fn select_row() -> f64 {
    let mut r = rng(13);
    max_gradient_error(&[random(vec![3, 4], &mut r)], 13, |t, v| t.select_row(v[0], 1).unwrap())
}

fn gather() -> f64 {
    let mut r = rng(14);
    max_gradient_error(&[random(vec![6], &mut r)], 14, |t, v| t.gather(v[0], &[5, 1, 1]).unwrap())
}

fn gather_columns() -> f64 {
    let mut r = rng(15);
    max_gradient_error(&[random(vec![3, 5], &mut r)], 15, |t, v| t.gather_columns(v[0], &[4, 0, 4]).unwrap())
}

fn causal_softmax() -> f64 {
    let mut r = rng(16);
    max_gradient_error(&[random(vec![4, 4], &mut r)], 16, |t, v| t.causal_softmax(v[0]).unwrap())
}

fn softmax_cross_entropy() -> f64 {
    let mut r = rng(17);
    let allowed = vec![true, true, false, true, true, true, true, false, true, false, true, true];
    max_gradient_error(&[random(vec![3, 4], &mut r)], 17, move |t, v| {
        t.softmax_cross_entropy(v[0], &[Some(3), None, Some(0)], Some(&allowed)).unwrap()
    })
}

fn log_sigmoid() -> f64 {
    let mut r = rng(18);
    max_gradient_error(&[Tensor::uniform(vec![6], 8.0, &mut r)], 18, |t, v| t.log_sigmoid(v[0]))
}

fn sum() -> f64 {
    let mut r = rng(19);
    max_gradient_error(&[random(vec![2, 3], &mut r)], 19, |t, v| t.sum(v[0]))
}

fn sum_squares() -> f64 {
    let mut r = rng(20);
    max_gradient_error(&[random(vec![2, 3], &mut r)], 20, |t, v| t.sum_squares(v[0]))
}

fn add_all() -> f64 {
    let mut r = rng(21);
    let inputs = [random(vec![1], &mut r), random(vec![1], &mut r), random(vec![1], &mut r)];
    max_gradient_error(&inputs, 21, |t, v| {
        let sq: Vec<Var> = v.iter().map(|&x| t.sum_squares(x)).collect();
        t.add_all(&sq).unwrap()
    })
}

/// Random tensors in the backbone's visit order.
fn backbone_inputs(config: &BackboneConfig, items: usize, seed: u64) -> Vec<Tensor> {
    let mut r = rng(seed);
    let params = conure::backbone::BackboneParams::init(config, items, &mut r).unwrap();
    let mut out = Vec::new();
    params.visit(&mut |_, _, t| out.push(random(t.shape().to_vec(), &mut r)));
    out
}

fn bind_vars(config: &BackboneConfig, v: &[Var]) -> BoundBackbone {
    let mut it = v.iter().copied();
    let mut next = || it.next().expect("enough vars");
    let embedding = next();
    let position = (config.architecture == Architecture::SelfAttention).then(&mut next);
    let mut blocks = Vec::new();
    match config.architecture {
        Architecture::Tcn => {
            for pair in config.dilations.chunks(2) {
                let ln1 = BoundLayerNorm { gain: next(), bias: next() };
                let conv1 = BoundConv { kernel: next(), bias: next(), dilation: pair[0] };
                let ln2 = BoundLayerNorm { gain: next(), bias: next() };
                let conv2 = BoundConv { kernel: next(), bias: next(), dilation: pair[1] };
                blocks.push(BoundBlock::Residual(BoundResidual { ln1, conv1, ln2, conv2 }));
            }
        }
        Architecture::SelfAttention => {
            for _ in 0..config.attention_blocks {
                blocks.push(BoundBlock::Attention(BoundAttention {
                    ln1: BoundLayerNorm { gain: next(), bias: next() },
                    query: next(),
                    key: next(),
                    value: next(),
                    output: next(),
                    ln2: BoundLayerNorm { gain: next(), bias: next() },
                    ff_in: next(),
                    ff_in_bias: next(),
                    ff_out: next(),
                    ff_out_bias: next(),
                }));
            }
        }
    }
    BoundBackbone { embedding, position, blocks }
}

fn encoder_error(config: BackboneConfig, seed: u64) -> f64 {
    let inputs = backbone_inputs(&config, 6, seed);
    let ids = [0, 3, 1, 6, 3];
    max_gradient_error(&inputs, seed, move |t, v| bind_vars(&config, v).encode(t, &ids).unwrap())
}

fn tcn_encoder() -> f64 {
    let config = BackboneConfig {
        hidden: 4,
        dilations: vec![1, 2, 1, 4],
        window: 5,
        ..Default::default()
    };
    encoder_error(config, 22)
}

fn attention_encoder() -> f64 {
    let config = BackboneConfig {
        architecture: Architecture::SelfAttention,
        hidden: 4,
        window: 5,
        attention_blocks: 2,
        ..Default::default()
    };
    encoder_error(config, 23)
}

fn next_item_loss() -> f64 {
    let mut r = rng(24);
    let inputs = [random(vec![4, 3], &mut r), random(vec![3, 7], &mut r), random(vec![7], &mut r)];
    max_gradient_error(&inputs, 24, |t, v| {
        let head = BoundHead { weight: v[1], bias: v[2] };
        autoregressive_loss(t, v[0], head, &[None, Some(2), Some(5), Some(2)], &[1, 6]).unwrap().unwrap()
    })
}

fn pairwise_loss() -> f64 {
    let mut r = rng(25);
    let inputs = [random(vec![1, 3], &mut r), random(vec![3, 5], &mut r), random(vec![5], &mut r)];
    max_gradient_error(&inputs, 25, |t, v| {
        let head = BoundHead { weight: v[1], bias: v[2] };
        bpr_loss(t, v[0], head, 3, 1, 0.02).unwrap()
    })
}

fn class_loss() -> f64 {
    let mut r = rng(26);
    let inputs = [random(vec![1, 3], &mut r), random(vec![3, 4], &mut r), random(vec![4], &mut r)];
    max_gradient_error(&inputs, 26, |t, v| {
        let head = BoundHead { weight: v[1], bias: v[2] };
        cross_entropy_loss(t, v[0], head, 2, 0.02).unwrap()
    })
}
