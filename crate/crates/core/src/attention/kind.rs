use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Candidate attention mechanisms, plus the dense reference.
///
/// Variants are declared in the lexicographic order of their short names, so
/// the derived `Ord` agrees with ordering by [`AttentionKind::name`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttentionKind {
    Bigbird,
    Dense,
    LinearTransformer,
    Linformer,
    Local,
    Longformer,
    Performer,
    Reformer,
    SparseTransformer,
    Synthesizer,
}

impl AttentionKind {
    /// The nine searchable mechanisms (everything except `Dense`).
    pub const CANDIDATES: [AttentionKind; 9] = [
        AttentionKind::Bigbird,
        AttentionKind::LinearTransformer,
        AttentionKind::Linformer,
        AttentionKind::Local,
        AttentionKind::Longformer,
        AttentionKind::Performer,
        AttentionKind::Reformer,
        AttentionKind::SparseTransformer,
        AttentionKind::Synthesizer,
    ];

    pub const ALL: [AttentionKind; 10] = [
        AttentionKind::Bigbird,
        AttentionKind::Dense,
        AttentionKind::LinearTransformer,
        AttentionKind::Linformer,
        AttentionKind::Local,
        AttentionKind::Longformer,
        AttentionKind::Performer,
        AttentionKind::Reformer,
        AttentionKind::SparseTransformer,
        AttentionKind::Synthesizer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttentionKind::Bigbird => "bigbird",
            AttentionKind::Dense => "dense",
            AttentionKind::LinearTransformer => "linear",
            AttentionKind::Linformer => "linformer",
            AttentionKind::Local => "local",
            AttentionKind::Longformer => "longformer",
            AttentionKind::Performer => "performer",
            AttentionKind::Reformer => "reformer",
            AttentionKind::SparseTransformer => "sparse",
            AttentionKind::Synthesizer => "synthesizer",
        }
    }

    /// Kinds whose attention is a fixed or random boolean pattern.
    pub fn is_pattern(self) -> bool {
        matches!(
            self,
            AttentionKind::Local | AttentionKind::SparseTransformer | AttentionKind::Longformer | AttentionKind::Bigbird
        )
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.trim().chars().filter(|c| !matches!(c, '_' | '-' | ' ')).collect::<String>().to_lowercase();
        Ok(match key.as_str() {
            "bigbird" => AttentionKind::Bigbird,
            "dense" | "softmax" => AttentionKind::Dense,
            "linear" | "lineartransformer" => AttentionKind::LinearTransformer,
            "linformer" => AttentionKind::Linformer,
            "local" => AttentionKind::Local,
            "longformer" => AttentionKind::Longformer,
            "performer" => AttentionKind::Performer,
            "reformer" => AttentionKind::Reformer,
            "sparse" | "sparsetransformer" => AttentionKind::SparseTransformer,
            "synthesizer" => AttentionKind::Synthesizer,
            _ => return Err(Error::Parse(format!("unknown attention kind {s:?}"))),
        })
    }
}

impl Serialize for AttentionKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for AttentionKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How a Synthesizer block produces its attention logits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    /// A per-position MLP maps each token to a row of logits.
    #[default]
    Dense,
    /// A free, input-independent logit matrix.
    Random,
}

/// Per-kind knobs shared by every block of a model. Fields irrelevant to a
/// block's kind are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionParams {
    pub window: usize,
    pub num_global: usize,
    pub num_random: usize,
    pub proj_rank: usize,
    pub num_features: usize,
    pub num_hashes: usize,
    pub bucket_size: usize,
    pub synth_mode: SynthMode,
}

impl Default for AttentionParams {
    fn default() -> Self {
        Self {
            window: 8,
            num_global: 1,
            num_random: 2,
            proj_rank: 8,
            num_features: 64,
            num_hashes: 2,
            bucket_size: 8,
            synth_mode: SynthMode::Dense,
        }
    }
}

/// Full configuration of one attention mechanism instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub kind: AttentionKind,
    pub params: AttentionParams,
    /// Longest sequence (including any prepended token) the instance supports.
    pub max_len: usize,
    pub seed: u64,
}

impl AttentionConfig {
    pub fn new(kind: AttentionKind, max_len: usize) -> Self {
        Self { kind, params: AttentionParams::default(), max_len, seed: 0 }
    }

    pub fn with_params(kind: AttentionKind, params: AttentionParams, max_len: usize, seed: u64) -> Self {
        Self { kind, params, max_len, seed }
    }

    /// Number of LSH buckets; tied to `max_len` so bucketing ignores padding.
    pub fn num_buckets(&self) -> usize {
        self.max_len.div_ceil(self.params.bucket_size.max(1)).max(1)
    }

    /// Checks the knobs the kind actually uses.
    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let bad = |what: &str| Err(Error::Config(format!("{}: {what}", self.kind)));
        if self.max_len == 0 {
            return bad("max_len must be positive");
        }
        match self.kind {
            k if k.is_pattern() && p.window == 0 => bad("window must be positive"),
            AttentionKind::Linformer if p.proj_rank == 0 => bad("proj_rank must be positive"),
            AttentionKind::Linformer if p.proj_rank > self.max_len => bad("proj_rank exceeds max_len"),
            AttentionKind::Performer if p.num_features == 0 => bad("num_features must be positive"),
            AttentionKind::Reformer if p.num_hashes == 0 || p.bucket_size == 0 => {
                bad("num_hashes and bucket_size must be positive")
            }
            _ => Ok(()),
        }
    }
}
