//! Masked-accuracy block scoring and the search procedures built on it.
//!
//! A block's score is `a_base - a_masked`: validation accuracy of the layer
//! as is, minus accuracy with that block left out of the average. Higher
//! means the block matters more.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionKind;
use crate::error::{Error, Result};
use crate::model::{ArchitectureSpec, Classify, LayerEntry, ModelConfig, Transformer};
use crate::tasks::{Dataset, TaskData};
use crate::train::{accuracy, TrainConfig, Trainer};

/// Fraction of `data` classified correctly by a deterministic pass.
pub fn validation_accuracy(model: &impl Classify, data: &Dataset) -> Result<f64> {
    accuracy(model, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub layer: usize,
    pub block: usize,
    pub kind: AttentionKind,
    pub score: f64,
    pub a_base: f64,
}

/// Scores of one scoring pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub a_base: f64,
    pub entries: Vec<ScoreEntry>,
}

impl ScoreTable {
    /// Highest score per kind.
    pub fn by_kind(&self) -> BTreeMap<AttentionKind, f64> {
        let mut best = BTreeMap::new();
        for e in &self.entries {
            best.entry(e.kind).and_modify(|s: &mut f64| *s = s.max(e.score)).or_insert(e.score);
        }
        best
    }

    /// Kinds by descending score; equal scores keep name order.
    pub fn ranking(&self) -> Vec<(AttentionKind, f64)> {
        let mut ranked: Vec<_> = self.by_kind().into_iter().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    }

    pub fn max_score(&self) -> Option<f64> {
        self.entries.iter().map(|e| e.score).max_by(f64::total_cmp)
    }

    /// Columns `layer,block,kind,score,a_base`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(e).expect("in-memory csv");
        }
        if self.entries.is_empty() {
            w.write_record(["layer", "block", "kind", "score", "a_base"]).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = r.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["layer", "block", "kind", "score", "a_base"] {
            return Err(Error::Parse(format!("score columns must be layer,block,kind,score,a_base, got {}", headers.iter().collect::<Vec<_>>().join(","))));
        }
        let entries: Vec<ScoreEntry> =
            r.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| Error::Parse(e.to_string()))?;
        if let Some(e) = entries.iter().find(|e| !e.score.is_finite()) {
            return Err(Error::Parse(format!("non-finite score for {}", e.kind)));
        }
        let a_base = entries.first().map_or(0.0, |e| e.a_base);
        Ok(Self { a_base, entries })
    }
}

/// Search budgets and knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Target heads per layer.
    pub heads: usize,
    pub candidates: Vec<AttentionKind>,
    pub pretrain_steps: u64,
    /// Training between consecutive removals.
    pub finetune_steps: u64,
    pub oneshot_k: usize,
    /// Blocks drawn per training pass in layer-wise search.
    pub sample_size: Option<usize>,
    pub num_layers: usize,
    pub warmup: u64,
    pub base_lr: f64,
    pub batch_size: usize,
    pub low_confidence_threshold: f64,
    /// Diagnostic: blocks of these kinds get a zero, frozen output projection.
    pub zero_kinds: Vec<AttentionKind>,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            heads: 8,
            candidates: AttentionKind::CANDIDATES.to_vec(),
            pretrain_steps: 2000,
            finetune_steps: 200,
            oneshot_k: 4,
            sample_size: None,
            num_layers: 2,
            warmup: 100,
            base_lr: 0.05,
            batch_size: 32,
            low_confidence_threshold: 0.02,
            zero_kinds: Vec::new(),
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 {
            return Err(Error::Config("heads must be at least 1".into()));
        }
        if self.candidates.is_empty() {
            return Err(Error::Config("no candidate attention kinds".into()));
        }
        if self.oneshot_k == 0 {
            return Err(Error::Config("oneshot_k must be at least 1".into()));
        }
        if self.num_layers == 0 {
            return Err(Error::Config("num_layers must be at least 1".into()));
        }
        self.train_config().validate()
    }

    /// Candidates without duplicates, in name order.
    pub fn kinds(&self) -> Vec<AttentionKind> {
        let mut k = self.candidates.clone();
        k.sort();
        k.dedup();
        k
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.pretrain_steps,
            warmup: self.warmup,
            base_lr: self.base_lr,
            batch_size: self.batch_size,
            eval_every: 0,
            seed: self.seed,
        }
    }
}

/// Scores every active block of `layer`. The model is left exactly as found.
pub fn score_blocks(model: &mut Transformer, layer: usize, val: &Dataset) -> Result<ScoreTable> {
    let active = model.layer(layer)?.active_ids();
    if active.len() < 2 {
        return Err(Error::Search(format!("layer {layer} has {} active block(s); scoring needs two", active.len())));
    }
    let a_base = validation_accuracy(model, val)?;
    let mut entries = Vec::with_capacity(active.len());
    for id in active {
        let kind = model.layer(layer)?.block(id)?.kind();
        model.mask_block(layer, id)?;
        let masked = validation_accuracy(model, val);
        model.unmask_block(layer, id)?;
        entries.push(ScoreEntry { layer, block: id, kind, score: a_base - masked?, a_base });
    }
    Ok(ScoreTable { a_base, entries })
}

/// Highest-scoring kind; ties go to the smaller name.
pub fn select_from_scores(table: &ScoreTable) -> Result<AttentionKind> {
    table.ranking().first().map(|r| r.0).ok_or_else(|| Error::Search("empty score table".into()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct HomogeneousOutcome {
    pub kind: AttentionKind,
    /// Absent when there was only one candidate.
    pub table: Option<ScoreTable>,
    /// The best score fell below the configured threshold.
    pub low_confidence: bool,
}

fn build_supernet(model_cfg: &ModelConfig, layers: usize, per_layer: Vec<LayerEntry>, cfg: &SearchConfig) -> Result<Transformer> {
    let mut mc = model_cfg.clone();
    mc.num_layers = layers;
    let mut model = Transformer::new(&mc, &vec![per_layer; layers], cfg.seed)?;
    for l in 0..layers {
        let zero: Vec<usize> =
            model.layer(l)?.blocks().iter().filter(|b| cfg.zero_kinds.contains(&b.kind())).map(|b| b.id()).collect();
        for id in zero {
            model.zero_block_output(l, id, true)?;
        }
    }
    Ok(model)
}

fn pretrain(model: &mut Transformer, task: &TaskData, cfg: &SearchConfig) -> Result<Trainer> {
    let mut trainer = Trainer::new(&cfg.train_config())?;
    trainer.run(model, &task.train, cfg.pretrain_steps)?;
    Ok(trainer)
}

/// Trains a one-layer supernet with one `heads`-head block per candidate and
/// picks the kind whose removal hurts validation accuracy most.
pub fn select_homogeneous(task: &TaskData, model_cfg: &ModelConfig, cfg: &SearchConfig) -> Result<HomogeneousOutcome> {
    cfg.validate()?;
    let kinds = cfg.kinds();
    if kinds.len() == 1 {
        return Ok(HomogeneousOutcome { kind: kinds[0], table: None, low_confidence: false });
    }
    let entries = kinds.iter().map(|&k| LayerEntry::new(k, cfg.heads)).collect();
    let mut model = build_supernet(model_cfg, 1, entries, cfg)?;
    pretrain(&mut model, task, cfg)?;
    select_homogeneous_on(&mut model, task, cfg)
}

/// Scoring and selection on an already trained one-layer supernet.
pub fn select_homogeneous_on(model: &mut Transformer, task: &TaskData, cfg: &SearchConfig) -> Result<HomogeneousOutcome> {
    let table = score_blocks(model, 0, &task.val)?;
    let kind = select_from_scores(&table)?;
    let low_confidence = table.max_score().is_some_and(|s| s < cfg.low_confidence_threshold);
    Ok(HomogeneousOutcome { kind, table: Some(table), low_confidence })
}

/// One removal during pruning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneStep {
    pub step: usize,
    pub layer: usize,
    pub removed_block: usize,
    pub removed_kind: AttentionKind,
    pub removed_score: f64,
    pub scores: ScoreTable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruneOutcome {
    pub spec: ArchitectureSpec,
    pub steps: Vec<PruneStep>,
}

/// The entry to remove: lowest score, then larger block id, then larger kind name.
pub fn worst_entry(table: &ScoreTable) -> Result<&ScoreEntry> {
    table
        .entries
        .iter()
        .min_by(|a, b| a.score.total_cmp(&b.score).then(b.block.cmp(&a.block)).then(b.kind.cmp(&a.kind)))
        .ok_or_else(|| Error::Search("empty score table".into()))
}

fn layer_heads(model: &Transformer, layer: usize) -> Result<usize> {
    Ok(model.layer(layer)?.blocks().iter().map(|b| b.heads()).sum())
}

/// Round-robin over layers: while a layer holds more than `heads` heads,
/// score it, remove its worst block and fine-tune. `trainer` continues the
/// pretraining schedule.
pub fn prune_on(model: &mut Transformer, trainer: &mut Trainer, task: &TaskData, cfg: &SearchConfig) -> Result<PruneOutcome> {
    let mut steps = Vec::new();
    loop {
        let mut progressed = false;
        for layer in 0..model.num_layers() {
            if layer_heads(model, layer)? <= cfg.heads {
                continue;
            }
            let table = score_blocks(model, layer, &task.val)?;
            let worst = worst_entry(&table)?.clone();
            if layer_heads(model, layer)? - model.layer(layer)?.block(worst.block)?.heads() < cfg.heads {
                return Err(Error::Search(format!("removing block {} would leave layer {layer} below {} heads", worst.block, cfg.heads)));
            }
            model.remove_block(layer, worst.block)?;
            steps.push(PruneStep {
                step: steps.len() + 1,
                layer,
                removed_block: worst.block,
                removed_kind: worst.kind,
                removed_score: worst.score,
                scores: table,
            });
            trainer.run(model, &task.train, cfg.finetune_steps)?;
            progressed = true;
        }
        if !progressed {
            break;
        }
    }
    Ok(PruneOutcome { spec: model.architecture()?, steps })
}

/// Starts from `heads` single-head blocks per candidate and prunes down to
/// `heads` blocks in total.
pub fn prune_search(task: &TaskData, model_cfg: &ModelConfig, cfg: &SearchConfig) -> Result<PruneOutcome> {
    cfg.validate()?;
    let kinds = cfg.kinds();
    if kinds.len() * cfg.heads <= cfg.heads {
        return Err(Error::Search(format!("{} initial blocks leave nothing to prune down to {} heads", kinds.len() * cfg.heads, cfg.heads)));
    }
    let entries = kinds.iter().flat_map(|&k| std::iter::repeat_n(LayerEntry::new(k, 1), cfg.heads)).collect();
    let mut model = build_supernet(model_cfg, 1, entries, cfg)?;
    let mut trainer = pretrain(&mut model, task, cfg)?;
    prune_on(&mut model, &mut trainer, task, cfg)
}

/// `num_layers` layers with one `heads`-head block per candidate, trained
/// with block sampling, pruned layer by layer to one block each.
pub fn layerwise_prune_search(task: &TaskData, model_cfg: &ModelConfig, cfg: &SearchConfig) -> Result<PruneOutcome> {
    cfg.validate()?;
    let kinds = cfg.kinds();
    if kinds.len() < 2 {
        return Err(Error::Search("layer-wise search needs at least two candidates".into()));
    }
    match cfg.sample_size {
        Some(0) => return Err(Error::Config("sample_size must be positive".into())),
        Some(s) if s > kinds.len() => {
            return Err(Error::Config(format!("sample_size {s} exceeds {} candidates", kinds.len())));
        }
        _ => {}
    }
    let entries = kinds.iter().map(|&k| LayerEntry::new(k, cfg.heads)).collect();
    let mut model = build_supernet(model_cfg, cfg.num_layers, entries, cfg)?;
    model.set_sample_size(cfg.sample_size)?;
    let mut trainer = pretrain(&mut model, task, cfg)?;
    prune_on(&mut model, &mut trainer, task, cfg)
}

/// Top `k` kinds by score with `heads` split evenly; earlier-ranked kinds
/// take the remainder.
pub fn oneshot_top_k(table: &ScoreTable, heads: usize, k: usize) -> Result<ArchitectureSpec> {
    let ranked = table.ranking();
    if k == 0 || ranked.len() < k {
        return Err(Error::Search(format!("need {k} scored kinds, have {}", ranked.len())));
    }
    if heads < k {
        return Err(Error::Search(format!("{heads} heads cannot cover {k} kinds")));
    }
    let layer = ranked[..k]
        .iter()
        .enumerate()
        .map(|(i, &(kind, _))| LayerEntry::new(kind, heads / k + usize::from(i < heads % k)))
        .collect();
    ArchitectureSpec::new(vec![layer])
}

pub fn oneshot_top4(table: &ScoreTable, heads: usize) -> Result<ArchitectureSpec> {
    oneshot_top_k(table, heads, 4)
}
