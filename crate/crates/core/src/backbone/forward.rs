use super::params::{AttentionBlockParams, BackboneConfig, BackboneParams, BlockParams, ResidualBlockParams};
use super::plan::WeightPlan;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var, LAYER_NORM_EPS};

pub struct BoundLayerNorm {
    pub gain: Var,
    pub bias: Var,
}

pub struct BoundConv {
    pub kernel: Var,
    pub bias: Var,
    pub dilation: usize,
}

pub struct BoundResidual {
    pub ln1: BoundLayerNorm,
    pub conv1: BoundConv,
    pub ln2: BoundLayerNorm,
    pub conv2: BoundConv,
}

pub struct BoundAttention {
    pub ln1: BoundLayerNorm,
    pub query: Var,
    pub key: Var,
    pub value: Var,
    pub output: Var,
    pub ln2: BoundLayerNorm,
    pub ff_in: Var,
    pub ff_in_bias: Var,
    pub ff_out: Var,
    pub ff_out_bias: Var,
}

pub enum BoundBlock {
    Residual(BoundResidual),
    Attention(BoundAttention),
}

/// Backbone tensors recorded once on a tape and shared by every sequence
/// encoded on it.
pub struct BoundBackbone {
    pub embedding: Var,
    pub position: Option<Var>,
    pub blocks: Vec<BoundBlock>,
}

fn layer_norm(tape: &mut Tape<'_>, ln: &BoundLayerNorm, x: Var) -> Result<Var> {
    tape.layer_norm(x, ln.gain, ln.bias, LAYER_NORM_EPS)
}

/// `x + σ(conv2(LN2(σ(conv1(LN1(x))))))`
pub fn residual_forward(tape: &mut Tape<'_>, block: &BoundResidual, x: Var) -> Result<Var> {
    let h = layer_norm(tape, &block.ln1, x)?;
    let h = tape.causal_conv1d(h, block.conv1.kernel, block.conv1.bias, block.conv1.dilation)?;
    let h = tape.relu(h);
    let h = layer_norm(tape, &block.ln2, h)?;
    let h = tape.causal_conv1d(h, block.conv2.kernel, block.conv2.bias, block.conv2.dilation)?;
    let h = tape.relu(h);
    tape.add(x, h)
}

/// Causal single-head attention over `[n × f]` inputs already projected
/// to queries, keys and values.
pub fn causal_attention(tape: &mut Tape<'_>, q: Var, k: Var, v: Var) -> Result<Var> {
    let f = tape.value(q).shape()[1];
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (f as f64).sqrt());
    let weights = tape.causal_softmax(scores)?;
    tape.matmul(weights, v)
}

/// Pre-norm attention sublayer followed by a pre-norm feed-forward
/// sublayer, each with a skip connection.
pub fn attention_forward(tape: &mut Tape<'_>, block: &BoundAttention, x: Var) -> Result<Var> {
    let h = layer_norm(tape, &block.ln1, x)?;
    let q = tape.matmul(h, block.query)?;
    let k = tape.matmul(h, block.key)?;
    let v = tape.matmul(h, block.value)?;
    let a = causal_attention(tape, q, k, v)?;
    let o = tape.matmul(a, block.output)?;
    let x = tape.add(x, o)?;
    let h = layer_norm(tape, &block.ln2, x)?;
    let h = tape.matmul(h, block.ff_in)?;
    let h = tape.add_row_bias(h, block.ff_in_bias)?;
    let h = tape.relu(h);
    let h = tape.matmul(h, block.ff_out)?;
    let h = tape.add_row_bias(h, block.ff_out_bias)?;
    tape.add(x, h)
}

impl BoundBackbone {
    /// Binds every tensor of `params`, looking up access rules under
    /// `prefix` + the tensor's backbone-relative name.
    pub fn bind<'a>(
        tape: &mut Tape<'a>,
        params: &'a BackboneParams,
        prefix: &str,
        plan: &'a WeightPlan,
    ) -> Result<Self> {
        let bind = |tape: &mut Tape<'a>, name: String, t: &'a Tensor| plan.bind(tape, &format!("{prefix}{name}"), t);
        let embedding = bind(tape, "embedding".into(), &params.embedding)?;
        let position = match &params.position {
            Some(p) => Some(bind(tape, "position".into(), p)?),
            None => None,
        };
        let mut blocks = Vec::with_capacity(params.blocks.len());
        for (b, block) in params.blocks.iter().enumerate() {
            let ln = |tape: &mut Tape<'a>, which: &str, p: &'a super::params::LayerNormParams| -> Result<BoundLayerNorm> {
                Ok(BoundLayerNorm {
                    gain: bind(tape, format!("block{b}.{which}.gain"), &p.gain)?,
                    bias: bind(tape, format!("block{b}.{which}.bias"), &p.bias)?,
                })
            };
            let bound = match block {
                BlockParams::Residual(r) => {
                    let ln1 = ln(tape, "ln1", &r.ln1)?;
                    let ln2 = ln(tape, "ln2", &r.ln2)?;
                    BoundBlock::Residual(BoundResidual {
                        ln1,
                        conv1: BoundConv {
                            kernel: bind(tape, format!("block{b}.conv1.kernel"), &r.conv1.kernel)?,
                            bias: bind(tape, format!("block{b}.conv1.bias"), &r.conv1.bias)?,
                            dilation: r.conv1.dilation,
                        },
                        ln2,
                        conv2: BoundConv {
                            kernel: bind(tape, format!("block{b}.conv2.kernel"), &r.conv2.kernel)?,
                            bias: bind(tape, format!("block{b}.conv2.bias"), &r.conv2.bias)?,
                            dilation: r.conv2.dilation,
                        },
                    })
                }
                BlockParams::Attention(a) => {
                    let ln1 = ln(tape, "ln1", &a.ln1)?;
                    let ln2 = ln(tape, "ln2", &a.ln2)?;
                    BoundBlock::Attention(BoundAttention {
                        ln1,
                        query: bind(tape, format!("block{b}.query"), &a.query)?,
                        key: bind(tape, format!("block{b}.key"), &a.key)?,
                        value: bind(tape, format!("block{b}.value"), &a.value)?,
                        output: bind(tape, format!("block{b}.output"), &a.output)?,
                        ln2,
                        ff_in: bind(tape, format!("block{b}.ff_in"), &a.ff_in)?,
                        ff_in_bias: bind(tape, format!("block{b}.ff_in_bias"), &a.ff_in_bias)?,
                        ff_out: bind(tape, format!("block{b}.ff_out"), &a.ff_out)?,
                        ff_out_bias: bind(tape, format!("block{b}.ff_out_bias"), &a.ff_out_bias)?,
                    })
                }
            };
            blocks.push(bound);
        }
        Ok(BoundBackbone {
            embedding,
            position,
            blocks,
        })
    }

    /// Final hidden states `E: [n × f]` for one id sequence.
    pub fn encode(&self, tape: &mut Tape<'_>, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::dim("encode_sequence", "length", 1, 0));
        }
        let mut x = tape.embedding_lookup(self.embedding, ids)?;
        if let Some(pos) = self.position {
            let window = tape.value(pos).shape()[0];
            if ids.len() > window {
                return Err(Error::dim("encode_sequence", "positions", window, ids.len()));
            }
            let rows: Vec<usize> = (0..ids.len()).collect();
            let p = tape.embedding_lookup(pos, &rows)?;
            x = tape.add(x, p)?;
        }
        for block in &self.blocks {
            x = match block {
                BoundBlock::Residual(r) => residual_forward(tape, r, x)?,
                BoundBlock::Attention(a) => attention_forward(tape, a, x)?,
            };
        }
        Ok(x)
    }

    /// Last row `g_{n-1}` of the encoding, as a `[1 × f]` matrix.
    pub fn encode_last(&self, tape: &mut Tape<'_>, ids: &[usize]) -> Result<Var> {
        let e = self.encode(tape, ids)?;
        let g = tape.select_row(e, ids.len() - 1)?;
        let f = tape.value(g).len();
        tape.reshape(g, vec![1, f])
    }
}

/// Output of the encoder for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    /// `E: [n × f]`
    pub hidden: Tensor,
    /// `g_{n-1}`, the last row of `hidden`.
    pub last: Vec<f64>,
}

/// Left-pads (or keeps the tail of) `items` to exactly `window` ids.
pub fn pad_to_window(items: &[u32], window: usize) -> Vec<usize> {
    let tail = &items[items.len().saturating_sub(window)..];
    let mut out = vec![0usize; window - tail.len()];
    out.extend(tail.iter().map(|&i| i as usize));
    out
}

/// Encodes one window of ids without recording gradients. `ids` must have
/// exactly `config.window` entries.
pub fn encode_sequence(
    config: &BackboneConfig,
    params: &BackboneParams,
    plan: &WeightPlan,
    prefix: &str,
    ids: &[usize],
) -> Result<Encoding> {
    if ids.len() != config.window {
        return Err(Error::dim("encode_sequence", "window", config.window, ids.len()));
    }
    let mut tape = Tape::new();
    let bound = BoundBackbone::bind(&mut tape, params, prefix, plan)?;
    let e = bound.encode(&mut tape, ids)?;
    let hidden = tape.value(e).clone();
    let last = hidden.row(ids.len() - 1).to_vec();
    Ok(Encoding { hidden, last })
}

/// One residual block applied to a tensor, using the block's weights as stored.
pub fn residual_block_forward(block: &ResidualBlockParams, input: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant_ref(input);
    let bound = BoundResidual {
        ln1: BoundLayerNorm {
            gain: tape.constant_ref(&block.ln1.gain),
            bias: tape.constant_ref(&block.ln1.bias),
        },
        conv1: BoundConv {
            kernel: tape.constant_ref(&block.conv1.kernel),
            bias: tape.constant_ref(&block.conv1.bias),
            dilation: block.conv1.dilation,
        },
        ln2: BoundLayerNorm {
            gain: tape.constant_ref(&block.ln2.gain),
            bias: tape.constant_ref(&block.ln2.bias),
        },
        conv2: BoundConv {
            kernel: tape.constant_ref(&block.conv2.kernel),
            bias: tape.constant_ref(&block.conv2.bias),
            dilation: block.conv2.dilation,
        },
    };
    let y = residual_forward(&mut tape, &bound, x)?;
    Ok(tape.value(y).clone())
}

/// One self-attention block applied to a tensor.
pub fn self_attention_block_forward(block: &AttentionBlockParams, input: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant_ref(input);
    fn c<'a>(tape: &mut Tape<'a>, t: &'a Tensor) -> Var {
        tape.constant_ref(t)
    }
    let bound = BoundAttention {
        ln1: BoundLayerNorm {
            gain: c(&mut tape, &block.ln1.gain),
            bias: c(&mut tape, &block.ln1.bias),
        },
        query: c(&mut tape, &block.query),
        key: c(&mut tape, &block.key),
        value: c(&mut tape, &block.value),
        output: c(&mut tape, &block.output),
        ln2: BoundLayerNorm {
            gain: c(&mut tape, &block.ln2.gain),
            bias: c(&mut tape, &block.ln2.bias),
        },
        ff_in: c(&mut tape, &block.ff_in),
        ff_in_bias: c(&mut tape, &block.ff_in_bias),
        ff_out: c(&mut tape, &block.ff_out),
        ff_out_bias: c(&mut tape, &block.ff_out_bias),
    };
    let y = attention_forward(&mut tape, &bound, x)?;
    Ok(tape.value(y).clone())
}
