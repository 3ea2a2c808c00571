//! Shared fixtures for the benchmarks.

use attnas_core::model::{LayerEntry, ModelConfig, Transformer};
use attnas_core::numcore::Tensor;
use attnas_core::{rng, AttentionKind};
use rand::Rng as _;

pub const EMBED: usize = 32;
pub const HEADS: usize = 4;

/// One-layer model holding a single `HEADS`-head block of `kind`.
pub fn single_block(kind: AttentionKind, max_len: usize) -> Transformer {
    let cfg = ModelConfig { embed_dim: EMBED, head_dim: EMBED / HEADS, max_seq_len: max_len, dropout: 0.0, ..Default::default() };
    Transformer::new(&cfg, &[vec![LayerEntry::new(kind, HEADS)]], 0).expect("valid benchmark model")
}

/// Random `(len, EMBED)` activations.
pub fn activations(len: usize, seed: u64) -> Tensor {
    let mut r = rng::seeded(seed);
    Tensor::from_fn(&[len, EMBED], |_| r.random_range(-1.0..1.0)).expect("finite activations")
}
