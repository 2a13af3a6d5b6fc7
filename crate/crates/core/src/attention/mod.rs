//! Temporal modeling: frame embedding, multi-head self-attention, the
//! intra-gloss and inter-gloss attention mechanisms and the encoder stack.
//!
//! Every operation comes in two forms: a `*_on` function that records onto
//! a [`crate::numcore::Tape`] for training, and a value-level function that
//! runs inference only.

mod block;
mod gloss;
mod mha;
mod types;

pub use block::{embed_frames, embed_frames_on, encode, encode_on, iiga_block, iiga_block_on};
pub use gloss::{chunk_pool_on, inter_broadcast_on, inter_gloss_attention, intra_gloss_attention, intra_sublayer_on};
pub use mha::{
    block_diagonal_mask, key_padding_mask, multi_head_attention, multi_head_attention_on, scaled_dot_attention,
    scaled_dot_attention_on, RelBiasRef,
};
pub use types::{
    make_chunks, AttentionMode, AttentionParams, BlockParams, ChunkPlan, FeatureSequence, FfnParams, IigaConfig,
    NormParams, LAYER_NORM_EPS,
};
