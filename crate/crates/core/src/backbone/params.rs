use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Stack of causal dilated convolution residual blocks.
    Tcn,
    /// Single-head causal self-attention blocks with learned positions.
    SelfAttention,
}

/// Shape of the shared sequence encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub architecture: Architecture,
    /// Embedding and hidden size `f`.
    pub hidden: usize,
    pub kernel_width: usize,
    /// Dilation of every convolution layer, two layers per residual block.
    pub dilations: Vec<usize>,
    /// Input window length `n`; shorter sequences are left-padded with id 0.
    pub window: usize,
    pub attention_blocks: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            architecture: Architecture::Tcn,
            hidden: 32,
            kernel_width: 3,
            dilations: vec![1, 2, 4, 8, 1, 2, 4, 8],
            window: 20,
            attention_blocks: 2,
        }
    }
}

impl BackboneConfig {
    /// Full-size MovieLens setting: f = 256, dilations 6 × {1, 2, 4, 8}, window 30.
    pub fn movielens_full() -> Self {
        BackboneConfig {
            hidden: 256,
            dilations: [1, 2, 4, 8].repeat(6),
            window: 30,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden size must be positive".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        match self.architecture {
            Architecture::Tcn => {
                if self.kernel_width == 0 {
                    return Err(Error::Config("kernel width must be positive".into()));
                }
                if self.dilations.is_empty() || !self.dilations.len().is_multiple_of(2) {
                    return Err(Error::Config(format!(
                        "dilation schedule needs an even, non-zero number of layers, got {}",
                        self.dilations.len()
                    )));
                }
                if self.dilations.contains(&0) {
                    return Err(Error::Config("dilations must be positive".into()));
                }
            }
            Architecture::SelfAttention => {
                if self.attention_blocks == 0 {
                    return Err(Error::Config("need at least one attention block".into()));
                }
            }
        }
        Ok(())
    }

    pub fn conv_layers(&self) -> usize {
        self.dilations.len()
    }
}

/// What a parameter tensor is, which decides its pruning and freezing rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Embedding,
    Position,
    LayerNormGain,
    LayerNormBias,
    ConvKernel,
    ConvBias,
    AttentionWeight,
    FeedForwardWeight,
    FeedForwardBias,
    HeadWeight,
    HeadBias,
}

impl ParamKind {
    /// Hidden-layer weights that take part in ownership masks. The
    /// embedding table joins them only when embedding pruning is enabled.
    pub fn is_prunable(self, embedding_pruning: bool) -> bool {
        match self {
            ParamKind::ConvKernel | ParamKind::AttentionWeight | ParamKind::FeedForwardWeight => true,
            ParamKind::Embedding => embedding_pruning,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNormParams {
    pub fn identity(f: usize) -> Self {
        LayerNormParams {
            gain: Tensor::filled(vec![f], 1.0),
            bias: Tensor::zeros(vec![f]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    /// `[k × f_in × f_out]`
    pub kernel: Tensor,
    pub bias: Tensor,
    pub dilation: usize,
}

/// Two pre-normalised causal convolutions wrapped by a skip connection.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlockParams {
    pub ln1: LayerNormParams,
    pub conv1: ConvParams,
    pub ln2: LayerNormParams,
    pub conv2: ConvParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlockParams {
    pub ln1: LayerNormParams,
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
    pub output: Tensor,
    pub ln2: LayerNormParams,
    pub ff_in: Tensor,
    pub ff_in_bias: Tensor,
    pub ff_out: Tensor,
    pub ff_out_bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlockParams {
    Residual(ResidualBlockParams),
    Attention(AttentionBlockParams),
}

/// All weights of one encoder instance.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneParams {
    /// `[(|X| + 1) × f]`, row 0 is the pad item.
    pub embedding: Tensor,
    /// `[window × f]`, attention variant only.
    pub position: Option<Tensor>,
    pub blocks: Vec<BlockParams>,
}

impl BackboneParams {
    /// Random initialisation for a vocabulary of `num_items` real items.
    pub fn init<R: Rng + ?Sized>(config: &BackboneConfig, num_items: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let f = config.hidden;
        let embedding = Tensor::uniform(vec![num_items + 1, f], 0.1, rng);
        let mut blocks = Vec::new();
        let position = match config.architecture {
            Architecture::Tcn => {
                let scale = 1.0 / ((config.kernel_width * f) as f64).sqrt();
                let conv = |dilation: usize, rng: &mut R| ConvParams {
                    kernel: Tensor::uniform(vec![config.kernel_width, f, f], scale, rng),
                    bias: Tensor::zeros(vec![f]),
                    dilation,
                };
                for pair in config.dilations.chunks(2) {
                    let conv1 = conv(pair[0], rng);
                    let conv2 = conv(pair[1], rng);
                    blocks.push(BlockParams::Residual(ResidualBlockParams {
                        ln1: LayerNormParams::identity(f),
                        conv1,
                        ln2: LayerNormParams::identity(f),
                        conv2,
                    }));
                }
                None
            }
            Architecture::SelfAttention => {
                let scale = 1.0 / (f as f64).sqrt();
                for _ in 0..config.attention_blocks {
                    blocks.push(BlockParams::Attention(AttentionBlockParams {
                        ln1: LayerNormParams::identity(f),
                        query: Tensor::uniform(vec![f, f], scale, rng),
                        key: Tensor::uniform(vec![f, f], scale, rng),
                        value: Tensor::uniform(vec![f, f], scale, rng),
                        output: Tensor::uniform(vec![f, f], scale, rng),
                        ln2: LayerNormParams::identity(f),
                        ff_in: Tensor::uniform(vec![f, f], scale, rng),
                        ff_in_bias: Tensor::zeros(vec![f]),
                        ff_out: Tensor::uniform(vec![f, f], scale, rng),
                        ff_out_bias: Tensor::zeros(vec![f]),
                    }));
                }
                Some(Tensor::uniform(vec![config.window, f], 0.1, rng))
            }
        };
        Ok(BackboneParams {
            embedding,
            position,
            blocks,
        })
    }

    pub fn num_items(&self) -> usize {
        self.embedding.shape()[0] - 1
    }

    /// Calls `f` for every tensor with its name relative to the backbone.
    pub fn visit(&self, f: &mut dyn FnMut(String, ParamKind, &Tensor)) {
        f("embedding".into(), ParamKind::Embedding, &self.embedding);
        if let Some(p) = &self.position {
            f("position".into(), ParamKind::Position, p);
        }
        for (b, block) in self.blocks.iter().enumerate() {
            match block {
                BlockParams::Residual(r) => {
                    let parts: [(&str, ParamKind, &Tensor); 8] = [
                        ("ln1.gain", ParamKind::LayerNormGain, &r.ln1.gain),
                        ("ln1.bias", ParamKind::LayerNormBias, &r.ln1.bias),
                        ("conv1.kernel", ParamKind::ConvKernel, &r.conv1.kernel),
                        ("conv1.bias", ParamKind::ConvBias, &r.conv1.bias),
                        ("ln2.gain", ParamKind::LayerNormGain, &r.ln2.gain),
                        ("ln2.bias", ParamKind::LayerNormBias, &r.ln2.bias),
                        ("conv2.kernel", ParamKind::ConvKernel, &r.conv2.kernel),
                        ("conv2.bias", ParamKind::ConvBias, &r.conv2.bias),
                    ];
                    for (n, k, t) in parts {
                        f(format!("block{b}.{n}"), k, t);
                    }
                }
                BlockParams::Attention(a) => {
                    let parts: [(&str, ParamKind, &Tensor); 12] = [
                        ("ln1.gain", ParamKind::LayerNormGain, &a.ln1.gain),
                        ("ln1.bias", ParamKind::LayerNormBias, &a.ln1.bias),
                        ("query", ParamKind::AttentionWeight, &a.query),
                        ("key", ParamKind::AttentionWeight, &a.key),
                        ("value", ParamKind::AttentionWeight, &a.value),
                        ("output", ParamKind::AttentionWeight, &a.output),
                        ("ln2.gain", ParamKind::LayerNormGain, &a.ln2.gain),
                        ("ln2.bias", ParamKind::LayerNormBias, &a.ln2.bias),
                        ("ff_in", ParamKind::FeedForwardWeight, &a.ff_in),
                        ("ff_in_bias", ParamKind::FeedForwardBias, &a.ff_in_bias),
                        ("ff_out", ParamKind::FeedForwardWeight, &a.ff_out),
                        ("ff_out_bias", ParamKind::FeedForwardBias, &a.ff_out_bias),
                    ];
                    for (n, k, t) in parts {
                        f(format!("block{b}.{n}"), k, t);
                    }
                }
            }
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(String, ParamKind, &mut Tensor)) {
        f("embedding".into(), ParamKind::Embedding, &mut self.embedding);
        if let Some(p) = &mut self.position {
            f("position".into(), ParamKind::Position, p);
        }
        for (b, block) in self.blocks.iter_mut().enumerate() {
            match block {
                BlockParams::Residual(r) => {
                    let parts: [(&str, ParamKind, &mut Tensor); 8] = [
                        ("ln1.gain", ParamKind::LayerNormGain, &mut r.ln1.gain),
                        ("ln1.bias", ParamKind::LayerNormBias, &mut r.ln1.bias),
                        ("conv1.kernel", ParamKind::ConvKernel, &mut r.conv1.kernel),
                        ("conv1.bias", ParamKind::ConvBias, &mut r.conv1.bias),
                        ("ln2.gain", ParamKind::LayerNormGain, &mut r.ln2.gain),
                        ("ln2.bias", ParamKind::LayerNormBias, &mut r.ln2.bias),
                        ("conv2.kernel", ParamKind::ConvKernel, &mut r.conv2.kernel),
                        ("conv2.bias", ParamKind::ConvBias, &mut r.conv2.bias),
                    ];
                    for (n, k, t) in parts {
                        f(format!("block{b}.{n}"), k, t);
                    }
                }
                BlockParams::Attention(a) => {
                    let parts: [(&str, ParamKind, &mut Tensor); 12] = [
                        ("ln1.gain", ParamKind::LayerNormGain, &mut a.ln1.gain),
                        ("ln1.bias", ParamKind::LayerNormBias, &mut a.ln1.bias),
                        ("query", ParamKind::AttentionWeight, &mut a.query),
                        ("key", ParamKind::AttentionWeight, &mut a.key),
                        ("value", ParamKind::AttentionWeight, &mut a.value),
                        ("output", ParamKind::AttentionWeight, &mut a.output),
                        ("ln2.gain", ParamKind::LayerNormGain, &mut a.ln2.gain),
                        ("ln2.bias", ParamKind::LayerNormBias, &mut a.ln2.bias),
                        ("ff_in", ParamKind::FeedForwardWeight, &mut a.ff_in),
                        ("ff_in_bias", ParamKind::FeedForwardBias, &mut a.ff_in_bias),
                        ("ff_out", ParamKind::FeedForwardWeight, &mut a.ff_out),
                        ("ff_out_bias", ParamKind::FeedForwardBias, &mut a.ff_out_bias),
                    ];
                    for (n, k, t) in parts {
                        f(format!("block{b}.{n}"), k, t);
                    }
                }
            }
        }
    }
}
