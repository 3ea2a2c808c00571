//! The candidate attention mechanisms.
//!
//! Simplified versions of Bigbird, Linear Transformer, Linformer, Local,
//! Longformer, Performer, Reformer, Sparse Transformer and Synthesizer, each
//! reducible to dense scaled dot-product attention under a degenerate
//! configuration. [`heads`] holds the tape-level kernels used by the model;
//! the free functions re-exported here wrap them for `(heads, seq, dim)`
//! tensors.

mod functional;
pub mod heads;
mod kind;
mod mask;

pub use functional::{
    dense_attention, kernel_attention, lowrank_attention, lsh_attention, lsh_patterns, pattern_attention,
    synthetic_attention, DenseSynthHead, SynthWeights,
};
pub use kind::{AttentionConfig, AttentionKind, AttentionParams, SynthMode};
pub use mask::{build_pattern_mask, key_padding_mask, PatternMask};
