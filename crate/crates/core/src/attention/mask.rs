use rand::Rng as _;

use super::kind::{AttentionConfig, AttentionKind};
use crate::error::{Error, Result};
use crate::rng;

/// Square boolean adjacency: entry `(i, j)` is true iff query `i` may attend to key `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatternMask {
    len: usize,
    bits: Vec<bool>,
}

impl PatternMask {
    /// Fails if a row has no allowed key.
    pub fn new(len: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != len * len {
            return Err(Error::Shape(format!("mask of {} bits is not {len}x{len}", bits.len())));
        }
        if let Some(row) = (0..len).find(|&i| !bits[i * len..(i + 1) * len].contains(&true)) {
            return Err(Error::DegenerateRow { row });
        }
        Ok(Self { len, bits })
    }

    pub fn full(len: usize) -> Self {
        Self { len, bits: vec![true; len * len] }
    }

    pub fn identity(len: usize) -> Self {
        let mut bits = vec![false; len * len];
        (0..len).for_each(|i| bits[i * len + i] = true);
        Self { len, bits }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn allows(&self, query: usize, key: usize) -> bool {
        self.bits[query * self.len + key]
    }

    pub fn row(&self, query: usize) -> &[bool] {
        &self.bits[query * self.len..(query + 1) * self.len]
    }

    pub fn row_count(&self, query: usize) -> usize {
        self.row(query).iter().filter(|&&b| b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    /// Embeds the mask into a `total × total` one whose trailing positions are
    /// padding: real queries never see padded keys, padded queries see only
    /// themselves.
    pub fn padded(&self, total: usize) -> Vec<bool> {
        assert!(total >= self.len, "padded size smaller than mask");
        let mut out = vec![false; total * total];
        for i in 0..total {
            if i < self.len {
                out[i * total..i * total + self.len].copy_from_slice(self.row(i));
            } else {
                out[i * total + i] = true;
            }
        }
        out
    }
}

/// Mask over `total` positions where only the first `valid` are real keys.
pub fn key_padding_mask(valid: usize, total: usize) -> Vec<bool> {
    PatternMask::full(valid).padded(total)
}

/// Fixed and random sparsity layouts.
///
/// * `Local`: band `|i - j| <= window / 2`.
/// * `SparseTransformer`: the band plus every key a multiple of `window` away.
/// * `Longformer`: the band plus `num_global` leading tokens that see and are
///   seen by everything.
/// * `Bigbird`: the Longformer layout plus `num_random` keys per row drawn
///   uniformly from a stream fixed by `(seed, seq_len)`.
pub fn build_pattern_mask(kind: AttentionKind, cfg: &AttentionConfig, seq_len: usize) -> Result<PatternMask> {
    if !kind.is_pattern() {
        return Err(Error::Config(format!("{kind} has no fixed pattern")));
    }
    let p = &cfg.params;
    if p.window == 0 {
        return Err(Error::Config("window must be positive".into()));
    }
    if seq_len == 0 {
        return Err(Error::Shape("empty sequence".into()));
    }
    let n = seq_len;
    let half = p.window / 2;
    let mut bits = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            let dist = i.abs_diff(j);
            bits[i * n + j] = dist <= half || (kind == AttentionKind::SparseTransformer && dist % p.window == 0);
        }
    }
    if matches!(kind, AttentionKind::Longformer | AttentionKind::Bigbird) {
        let g = p.num_global.min(n);
        for i in 0..n {
            for j in 0..n {
                if i < g || j < g {
                    bits[i * n + j] = true;
                }
            }
        }
    }
    if kind == AttentionKind::Bigbird && p.num_random > 0 {
        let mut r = rng::stream(rng::derive_seed(cfg.seed, "bigbird"), n as u64);
        for i in 0..n {
            for _ in 0..p.num_random {
                let j = r.random_range(0..n);
                bits[i * n + j] = true;
            }
        }
    }
    PatternMask::new(n, bits)
}
