use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionKind, AttentionParams};
use crate::error::{Error, Result};

/// Encoder and classifier sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Width of one attention head.
    pub head_dim: usize,
    /// Hidden width of the feed-forward sublayer.
    pub ffn_hidden: usize,
    pub num_layers: usize,
    pub vocab_size: usize,
    /// Longest input, not counting the prepended CLS token.
    pub max_seq_len: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub attention: AttentionParams,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            head_dim: 8,
            ffn_hidden: 64,
            num_layers: 1,
            vocab_size: 256,
            max_seq_len: 128,
            num_classes: 2,
            dropout: 0.1,
            attention: AttentionParams::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("embed_dim", self.embed_dim),
            ("head_dim", self.head_dim),
            ("ffn_hidden", self.ffn_hidden),
            ("num_layers", self.num_layers),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Longest sequence an attention block sees (input plus CLS).
    pub fn attention_len(&self) -> usize {
        self.max_seq_len + 1
    }
}

/// One attention kind and its head count within a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub kind: AttentionKind,
    pub heads: usize,
}

impl LayerEntry {
    pub fn new(kind: AttentionKind, heads: usize) -> Self {
        Self { kind, heads }
    }
}

/// Attention kinds and head counts for every layer, in canonical form: each
/// kind appears at most once per layer and entries are sorted by kind name.
///
/// Stored as JSON: `{"layers": [[{"kind": "performer", "heads": 4}], ...]}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct ArchitectureSpec {
    layers: Vec<Vec<LayerEntry>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    layers: Vec<Vec<LayerEntry>>,
}

impl TryFrom<RawSpec> for ArchitectureSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        Self::new(raw.layers)
    }
}

impl ArchitectureSpec {
    /// Merges same-kind entries, drops zero-head entries and sorts each layer.
    pub fn new(layers: Vec<Vec<LayerEntry>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("architecture has no layers".into()));
        }
        let layers = layers
            .into_iter()
            .enumerate()
            .map(|(i, layer)| {
                let mut merged: Vec<LayerEntry> = Vec::new();
                for e in layer.into_iter().filter(|e| e.heads > 0) {
                    match merged.iter_mut().find(|m| m.kind == e.kind) {
                        Some(m) => m.heads += e.heads,
                        None => merged.push(e),
                    }
                }
                if merged.is_empty() {
                    return Err(Error::Config(format!("layer {i} has no attention heads")));
                }
                merged.sort_by_key(|e| e.kind);
                Ok(merged)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// Every layer uses `heads` heads of `kind`.
    pub fn homogeneous(kind: AttentionKind, heads: usize, num_layers: usize) -> Result<Self> {
        Self::new(vec![vec![LayerEntry::new(kind, heads)]; num_layers.max(1)])
    }

    pub fn layers(&self) -> &[Vec<LayerEntry>] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn heads_per_layer(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.iter().map(|e| e.heads).sum()).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("spec serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl std::fmt::Display for ArchitectureSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                f.write_str(" -> ")?;
            }
            let parts: Vec<String> = layer.iter().map(|e| format!("{} x {}", e.kind, e.heads)).collect();
            write!(f, "[{}]", parts.join(", "))?;
        }
        Ok(())
    }
}
