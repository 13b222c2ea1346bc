//! Shared sequence encoder and task-specific prediction heads.

mod forward;
mod head;
mod params;
mod plan;

pub use forward::{
    attention_forward, causal_attention, encode_sequence, pad_to_window, residual_block_forward, residual_forward,
    self_attention_block_forward, BoundAttention, BoundBackbone, BoundBlock, BoundConv, BoundLayerNorm,
    BoundResidual, Encoding,
};
pub use head::{predict_scores, TaskHead};
pub use params::{
    Architecture, AttentionBlockParams, BackboneConfig, BackboneParams, BlockParams, ConvParams, LayerNormParams,
    ParamKind, ResidualBlockParams,
};
pub use plan::{Access, WeightPlan};
