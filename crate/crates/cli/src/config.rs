//! Run configuration: one TOML file per run, strictly validated.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use attnas_core::tasks::{self, TaskData};
use attnas_core::{AttentionParams, ModelConfig, SearchConfig, TaskSpec, TrainConfig};
use serde::{Deserialize, Serialize};

/// Model sizes. Vocabulary, sequence length and class count come from the task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub head_dim: usize,
    pub ffn_hidden: usize,
    pub num_layers: usize,
    pub dropout: f64,
    pub attention: AttentionParams,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            embed_dim: m.embed_dim,
            head_dim: m.head_dim,
            ffn_hidden: m.ffn_hidden,
            num_layers: m.num_layers,
            dropout: m.dropout,
            attention: m.attention,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialization, training and search. `search.seed` and
    /// `train.seed` are overwritten with it; data comes from `task.seed`.
    #[serde(default)]
    pub seed: u64,
    /// Independent training runs, seeded `seed`, `seed + 1`, ...
    #[serde(default = "one")]
    pub runs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub task: TaskSpec,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn one() -> usize {
    1
}

impl RunConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Applies the seed everywhere it belongs and checks every section.
    pub fn resolve(mut self, seed: Option<u64>) -> anyhow::Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.search.seed = self.seed;
        self.train.seed = self.seed;
        if self.runs == 0 {
            bail!("runs must be at least 1");
        }
        self.task.validate()?;
        self.model_config().validate()?;
        self.search.validate()?;
        self.train.validate()?;
        Ok(self)
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            embed_dim: m.embed_dim,
            head_dim: m.head_dim,
            ffn_hidden: m.ffn_hidden,
            num_layers: m.num_layers,
            vocab_size: self.task.vocab_size(),
            max_seq_len: self.task.max_seq_len,
            num_classes: self.task.num_classes(),
            dropout: m.dropout,
            attention: m.attention.clone(),
        }
    }

    pub fn generate(&self) -> anyhow::Result<TaskData> {
        Ok(tasks::generate(&self.task)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::parse("[task]\nname = \"listops\"\n").unwrap().resolve(Some(7)).unwrap();
        assert_eq!(cfg.runs, 1);
        assert_eq!((cfg.search.seed, cfg.train.seed), (7, 7));
        let m = cfg.model_config();
        assert_eq!(m.num_classes, 10);
        assert_eq!(m.max_seq_len, 128);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("[task]\nname = \"match\"\n[model]\nwidth = 3\n").is_err());
        assert!(RunConfig::parse("bogus = 1\n[task]\nname = \"match\"\n").is_err());
        assert!(RunConfig::parse("[task]\nname = \"match\"\n[model]\nvocab_size = 3\n").is_err());
    }

    #[test]
    fn audit_copy_round_trips() {
        let cfg = RunConfig::parse("seed = 3\n[task]\nname = \"bytecls\"\n[search]\ncandidates = [\"local\", \"performer\"]\n")
            .unwrap()
            .resolve(None)
            .unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }
}
