use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::block::{uniform_init, AttentionBlock, SeqLayout};
use super::spec::{ArchitectureSpec, LayerEntry, ModelConfig};
use crate::attention::{AttentionConfig, AttentionKind};
use crate::error::{Error, Result};
use crate::numcore::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng::{self, Rng};
use crate::tasks::{Batch, CLS};

const LN_EPS: f64 = 1e-5;

/// Where a block sits and whether it takes part in the forward average.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub id: usize,
    pub kind: AttentionKind,
    pub heads: usize,
    pub active: bool,
}

/// The attention sublayer: the plain mean over its used blocks.
#[derive(Clone, Debug)]
pub struct SupernetLayer {
    blocks: Vec<AttentionBlock>,
    sample_size: Option<usize>,
}

impl SupernetLayer {
    pub fn blocks(&self) -> &[AttentionBlock] {
        &self.blocks
    }

    pub fn block(&self, id: usize) -> Result<&AttentionBlock> {
        self.blocks.iter().find(|b| b.id() == id).ok_or(Error::Index { index: id, len: self.blocks.len() })
    }

    fn block_mut(&mut self, id: usize) -> Result<&mut AttentionBlock> {
        let len = self.blocks.len();
        self.blocks.iter_mut().find(|b| b.id() == id).ok_or(Error::Index { index: id, len })
    }

    pub fn active_ids(&self) -> Vec<usize> {
        self.blocks.iter().filter(|b| b.is_active()).map(AttentionBlock::id).collect()
    }

    pub fn sample_size(&self) -> Option<usize> {
        self.sample_size
    }

    /// Blocks averaged in one pass: every active block, or during training a
    /// uniform subset of `sample_size` of them.
    fn used_ids(&self, r: Option<&mut Rng>) -> Vec<usize> {
        let active = self.active_ids();
        match (self.sample_size, r) {
            (Some(s), Some(r)) if s < active.len() => {
                let mut picked: Vec<usize> = sample(r, active.len(), s).into_iter().map(|i| active[i]).collect();
                picked.sort_unstable();
                picked
            }
            _ => active,
        }
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attention: SupernetLayer,
    norm1: [ParamId; 2],
    norm2: [ParamId; 2],
    /// Hidden weight, hidden bias, output weight, output bias.
    ffn: [ParamId; 4],
}

/// Result of a forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `rows × num_classes` logits at the CLS position.
    pub logits: Var,
    /// Block ids averaged in each layer.
    pub used: Vec<Vec<usize>>,
}

/// Pre-norm Transformer encoder with a CLS classifier. Each attention
/// sublayer averages one or more [`AttentionBlock`]s.
#[derive(Clone, Debug)]
pub struct Transformer {
    cfg: ModelConfig,
    seed: u64,
    store: ParamStore,
    token_emb: ParamId,
    pos_emb: ParamId,
    layers: Vec<EncoderLayer>,
    final_norm: [ParamId; 2],
    classifier: [ParamId; 2],
}

/// Anything that assigns classes to a batch.
pub trait Classify {
    fn predict(&self, batch: &Batch) -> Result<Vec<usize>>;
}

fn argmax(row: &[f64]) -> usize {
    row.iter().enumerate().fold(0, |best, (i, &x)| if x > row[best] { i } else { best })
}

impl Transformer {
    /// A model with the given blocks per layer, kept in order and unmerged.
    pub fn new(cfg: &ModelConfig, layers: &[Vec<LayerEntry>], seed: u64) -> Result<Self> {
        let layout: Vec<Vec<BlockLayout>> = layers
            .iter()
            .map(|l| {
                l.iter().enumerate().map(|(id, e)| BlockLayout { id, kind: e.kind, heads: e.heads, active: true }).collect()
            })
            .collect();
        Self::from_layout(cfg, &layout, seed)
    }

    /// A freshly initialized model for `spec`. A one-layer spec is repeated
    /// over all `cfg.num_layers` layers.
    pub fn from_spec(spec: &ArchitectureSpec, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let layers: Vec<Vec<LayerEntry>> = match spec.num_layers() {
            1 => vec![spec.layers()[0].clone(); cfg.num_layers],
            n if n == cfg.num_layers => spec.layers().to_vec(),
            n => return Err(Error::Config(format!("spec has {n} layers, model has {}", cfg.num_layers))),
        };
        Self::new(cfg, &layers, seed)
    }

    pub fn from_layout(cfg: &ModelConfig, layout: &[Vec<BlockLayout>], seed: u64) -> Result<Self> {
        cfg.validate()?;
        if layout.len() != cfg.num_layers {
            return Err(Error::Config(format!("{} layers given, config wants {}", layout.len(), cfg.num_layers)));
        }
        let e = cfg.embed_dim;
        let mut r = rng::stream(rng::derive_seed(seed, "init"), 0);
        let mut store = ParamStore::new();
        let normal = Normal::new(0.0, 1.0 / (e as f64).sqrt()).expect("positive std");
        let embedding = |r: &mut Rng, rows: usize| {
            Tensor::from_fn(&[rows, e], |_| normal.sample(r)).expect("positive shape").with_grad()
        };
        let token_emb = store.add("embed/token", embedding(&mut r, cfg.vocab_size));
        let pos_emb = store.add("embed/position", embedding(&mut r, cfg.attention_len()));
        let norm = |store: &mut ParamStore, name: &str| {
            [
                store.add(format!("{name}/gamma"), Tensor::new(vec![1, e], vec![1.0; e]).expect("ones").with_grad()),
                store.add(format!("{name}/beta"), Tensor::zeros(&[1, e]).with_grad()),
            ]
        };
        let mut layers = Vec::with_capacity(layout.len());
        for (l, blocks) in layout.iter().enumerate() {
            if blocks.is_empty() {
                return Err(Error::Config(format!("layer {l} has no attention blocks")));
            }
            if !blocks.iter().any(|b| b.active) {
                return Err(Error::LastActiveBlock { layer: l });
            }
            let mut built = Vec::with_capacity(blocks.len());
            for b in blocks {
                if built.iter().any(|x: &AttentionBlock| x.id() == b.id) {
                    return Err(Error::Config(format!("duplicate block id {} in layer {l}", b.id)));
                }
                let acfg = AttentionConfig::with_params(
                    b.kind,
                    cfg.attention.clone(),
                    cfg.attention_len(),
                    rng::derive_seed(seed, &format!("attention/{l}/{}", b.id)),
                );
                let prefix = format!("layer{l}/block{}", b.id);
                let mut block = AttentionBlock::new(&mut store, &mut r, &prefix, b.id, b.kind, b.heads, e, cfg.head_dim, acfg)?;
                block.active = b.active;
                built.push(block);
            }
            let norm1 = norm(&mut store, &format!("layer{l}/norm1"));
            let norm2 = norm(&mut store, &format!("layer{l}/norm2"));
            let m = cfg.ffn_hidden;
            let ffn = [
                store.add(format!("layer{l}/ffn/w1"), uniform_init(&mut r, &[e, m], e)),
                store.add(format!("layer{l}/ffn/b1"), Tensor::zeros(&[1, m]).with_grad()),
                store.add(format!("layer{l}/ffn/w2"), uniform_init(&mut r, &[m, e], m)),
                store.add(format!("layer{l}/ffn/b2"), Tensor::zeros(&[1, e]).with_grad()),
            ];
            layers.push(EncoderLayer { attention: SupernetLayer { blocks: built, sample_size: None }, norm1, norm2, ffn });
        }
        let final_norm = norm(&mut store, "final_norm");
        let classifier = [
            store.add("classifier/w", uniform_init(&mut r, &[e, cfg.num_classes], e)),
            store.add("classifier/b", Tensor::zeros(&[1, cfg.num_classes]).with_grad()),
        ];
        Ok(Self { cfg: cfg.clone(), seed, store, token_emb, pos_emb, layers, final_norm, classifier })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, l: usize) -> Result<&SupernetLayer> {
        self.layers.get(l).map(|x| &x.attention).ok_or(Error::Index { index: l, len: self.layers.len() })
    }

    fn layer_mut(&mut self, l: usize) -> Result<&mut SupernetLayer> {
        let len = self.layers.len();
        self.layers.get_mut(l).map(|x| &mut x.attention).ok_or(Error::Index { index: l, len })
    }

    pub fn classifier(&self) -> [ParamId; 2] {
        self.classifier
    }

    pub fn embeddings(&self) -> [ParamId; 2] {
        [self.token_emb, self.pos_emb]
    }

    /// Current blocks of every layer.
    pub fn layout(&self) -> Vec<Vec<BlockLayout>> {
        self.layers
            .iter()
            .map(|l| {
                l.attention
                    .blocks
                    .iter()
                    .map(|b| BlockLayout { id: b.id(), kind: b.kind(), heads: b.heads(), active: b.is_active() })
                    .collect()
            })
            .collect()
    }

    /// The architecture formed by the active blocks.
    pub fn architecture(&self) -> Result<ArchitectureSpec> {
        ArchitectureSpec::new(
            self.layers
                .iter()
                .map(|l| {
                    l.attention.blocks.iter().filter(|b| b.is_active()).map(|b| LayerEntry::new(b.kind(), b.heads())).collect()
                })
                .collect(),
        )
    }

    /// Excludes a block from the average; the remaining blocks are averaged
    /// over their own count.
    pub fn mask_block(&mut self, layer: usize, id: usize) -> Result<()> {
        let l = self.layer_mut(layer)?;
        let target = l.block(id)?;
        if target.is_active() && l.active_ids().len() == 1 {
            return Err(Error::LastActiveBlock { layer });
        }
        l.block_mut(id)?.active = false;
        Ok(())
    }

    pub fn unmask_block(&mut self, layer: usize, id: usize) -> Result<()> {
        self.layer_mut(layer)?.block_mut(id)?.active = true;
        Ok(())
    }

    /// Deletes a block. Its parameters stay in the store but are never read again.
    pub fn remove_block(&mut self, layer: usize, id: usize) -> Result<AttentionBlock> {
        let l = self.layer_mut(layer)?;
        let pos = l.blocks.iter().position(|b| b.id() == id).ok_or(Error::Index { index: id, len: l.blocks.len() })?;
        if l.blocks[pos].is_active() && l.active_ids().len() == 1 {
            return Err(Error::LastActiveBlock { layer });
        }
        Ok(l.blocks.remove(pos))
    }

    /// Enables per-pass block sampling during training in every layer.
    pub fn set_sample_size(&mut self, size: Option<usize>) -> Result<()> {
        if size == Some(0) {
            return Err(Error::Config("sample_size must be positive".into()));
        }
        self.layers.iter_mut().for_each(|l| l.attention.sample_size = size);
        Ok(())
    }

    /// Sets a block's output projection to zero; with `freeze` it also stops
    /// receiving gradients, so the block contributes nothing forever.
    pub fn zero_block_output(&mut self, layer: usize, id: usize, freeze: bool) -> Result<()> {
        let wo = self.layer(layer)?.block(id)?.output_projection();
        let t = self.store.get_mut(wo);
        t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        if freeze {
            self.set_block_trainable(layer, id, false)?;
        }
        Ok(())
    }

    pub fn set_block_trainable(&mut self, layer: usize, id: usize, trainable: bool) -> Result<()> {
        for p in self.layer(layer)?.block(id)?.param_ids() {
            self.store.get_mut(p).set_requires_grad(trainable);
        }
        Ok(())
    }

    fn shared_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.token_emb, self.pos_emb];
        for l in &self.layers {
            ids.extend(l.norm1);
            ids.extend(l.norm2);
            ids.extend(l.ffn);
        }
        ids.extend(self.final_norm);
        ids.extend(self.classifier);
        ids
    }

    /// Parameters of every block still in the model plus the shared ones.
    pub fn live_param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.shared_ids();
        for l in &self.layers {
            for b in &l.attention.blocks {
                ids.extend(b.param_ids());
            }
        }
        ids.sort_unstable();
        ids
    }

    /// Parameters an optimizer step should touch after a pass that used
    /// `used` blocks: shared parameters plus those blocks', minus frozen ones.
    pub fn trainable_ids(&self, used: &[Vec<usize>]) -> Result<Vec<ParamId>> {
        let mut ids = self.shared_ids();
        for (l, ids_in_layer) in used.iter().enumerate() {
            let layer = self.layer(l)?;
            for &id in ids_in_layer {
                ids.extend(layer.block(id)?.param_ids());
            }
        }
        ids.retain(|&p| self.store.get(p).requires_grad());
        ids.sort_unstable();
        ids.dedup();
        Ok(ids)
    }

    /// Copy of all parameter values.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.store.ids().map(|id| self.store.get(id).data().to_vec()).collect()
    }

    pub fn restore(&mut self, snap: &[Vec<f64>]) -> Result<()> {
        if snap.len() != self.store.len() {
            return Err(Error::Shape("snapshot does not match the parameter store".into()));
        }
        for (id, values) in self.store.ids().collect::<Vec<_>>().into_iter().zip(snap) {
            let t = self.store.get_mut(id);
            if t.numel() != values.len() {
                return Err(Error::Shape(format!("snapshot entry for {} has the wrong size", id.index())));
            }
            t.data_mut().copy_from_slice(values);
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.rows() == 0 {
            return Err(Error::EmptyDataset);
        }
        let longest = batch.lengths.iter().copied().max().unwrap_or(0);
        if longest > self.cfg.max_seq_len || batch.width > self.cfg.max_seq_len {
            return Err(Error::SequenceTooLong { len: longest.max(batch.width), max: self.cfg.max_seq_len });
        }
        if let Some(&t) = batch.tokens.iter().find(|&&t| t as usize >= self.cfg.vocab_size) {
            return Err(Error::Index { index: t as usize, len: self.cfg.vocab_size });
        }
        Ok(())
    }

    fn dropout(&self, tape: &mut Tape, x: Var, r: Option<&mut Rng>) -> Var {
        let p = self.cfg.dropout;
        match r {
            Some(r) if p > 0.0 => {
                let (rows, cols) = tape.shape(x);
                let keep = 1.0 / (1.0 - p);
                let mask: Vec<f64> = (0..rows * cols).map(|_| if r.random_bool(p) { 0.0 } else { keep }).collect();
                tape.mul_const(x, mask)
            }
            _ => x,
        }
    }

    fn embed(&self, tape: &mut Tape, batch: &Batch) -> (Var, SeqLayout) {
        let w = batch.width + 1;
        let mut tokens = Vec::with_capacity(batch.rows() * w);
        for i in 0..batch.rows() {
            tokens.push(CLS as usize);
            tokens.extend(batch.row(i).iter().map(|&t| t as usize));
        }
        let positions: Vec<usize> = (0..batch.rows()).flat_map(|_| 0..w).collect();
        let te = tape.param(&self.store, self.token_emb);
        let pe = tape.param(&self.store, self.pos_emb);
        let t = tape.gather_rows(te, &tokens);
        let p = tape.gather_rows(pe, &positions);
        let layout = SeqLayout { width: w, valid: batch.lengths.iter().map(|l| l + 1).collect() };
        (tape.add(t, p), layout)
    }

    fn attention_sublayer(&self, tape: &mut Tape, layer: &SupernetLayer, x: Var, layout: &SeqLayout, used: &[usize]) -> Result<Var> {
        let outs = used
            .iter()
            .map(|&id| layer.block(id)?.forward(tape, &self.store, x, layout))
            .collect::<Result<Vec<_>>>()?;
        Ok(tape.mean_of(&outs))
    }

    /// Classifies every row of `batch`. With `train` set, dropout and block
    /// sampling draw from it; otherwise the pass is deterministic.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch, mut train: Option<&mut Rng>) -> Result<Forward> {
        self.check_batch(batch)?;
        let (mut h, layout) = self.embed(tape, batch);
        let mut used_all = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let used = layer.attention.used_ids(train.as_deref_mut());
            let [g1, b1] = layer.norm1.map(|id| tape.param(&self.store, id));
            let n1 = tape.layer_norm(h, g1, b1, LN_EPS);
            let a = self.attention_sublayer(tape, &layer.attention, n1, &layout, &used)?;
            let a = self.dropout(tape, a, train.as_deref_mut());
            h = tape.add(h, a);
            let [g2, b2] = layer.norm2.map(|id| tape.param(&self.store, id));
            let n2 = tape.layer_norm(h, g2, b2, LN_EPS);
            let [w1, c1, w2, c2] = layer.ffn.map(|id| tape.param(&self.store, id));
            let f = tape.matmul(n2, w1);
            let f = tape.add_row(f, c1);
            let f = tape.relu(f);
            let f = tape.matmul(f, w2);
            let f = tape.add_row(f, c2);
            let f = self.dropout(tape, f, train.as_deref_mut());
            h = tape.add(h, f);
            used_all.push(used);
        }
        let cls_rows: Vec<usize> = (0..batch.rows()).map(|i| i * layout.width).collect();
        let cls = tape.gather_rows(h, &cls_rows);
        let [g, b] = self.final_norm.map(|id| tape.param(&self.store, id));
        let cls = tape.layer_norm(cls, g, b, LN_EPS);
        let [wc, bc] = self.classifier.map(|id| tape.param(&self.store, id));
        let logits = tape.matmul(cls, wc);
        let logits = tape.add_row(logits, bc);
        Ok(Forward { logits, used: used_all })
    }

    /// Deterministic logits (`rows × num_classes`).
    pub fn logits(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, batch, None)?;
        Ok(tape.to_tensor(f.logits))
    }

    /// Mean cross-entropy of a deterministic pass.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, batch, None)?;
        let loss = tape.cross_entropy(f.logits, &batch.labels);
        Ok(tape.scalar(loss))
    }

    /// Mean cross-entropy of a deterministic pass, with gradients accumulated into the store.
    pub fn loss_and_grad(&mut self, batch: &Batch) -> Result<f64> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, batch, None)?;
        let loss = tape.cross_entropy(f.logits, &batch.labels);
        let value = tape.scalar(loss);
        tape.backward(loss, &mut self.store)?;
        Ok(value)
    }

    /// One block applied to a single unpadded sequence `x` (`seq × embed_dim`).
    pub fn block_forward(&self, layer: usize, id: usize, x: &Tensor) -> Result<Tensor> {
        let block = self.layer(layer)?.block(id)?;
        let mut tape = Tape::new();
        let xv = tape.input(x);
        let (n, _) = x.dims2()?;
        let out = block.forward(&mut tape, &self.store, xv, &SeqLayout::single(n))?;
        Ok(tape.to_tensor(out))
    }

    /// The attention sublayer of `layer` (mean over active blocks) on one sequence.
    pub fn supernet_forward(&self, layer: usize, x: &Tensor) -> Result<Tensor> {
        let l = self.layer(layer)?;
        let active = l.active_ids();
        if active.is_empty() {
            return Err(Error::LastActiveBlock { layer });
        }
        let mut tape = Tape::new();
        let xv = tape.input(x);
        let (n, _) = x.dims2()?;
        let out = self.attention_sublayer(&mut tape, l, xv, &SeqLayout::single(n), &active)?;
        Ok(tape.to_tensor(out))
    }
}

impl Classify for Transformer {
    fn predict(&self, batch: &Batch) -> Result<Vec<usize>> {
        let logits = self.logits(batch)?;
        Ok(logits.data().chunks(self.cfg.num_classes).map(argmax).collect())
    }
}
