use rand_distr::{Distribution, Uniform};

use crate::attention::{build_pattern_mask, heads, key_padding_mask, AttentionConfig, AttentionKind, PatternMask, SynthMode};
use crate::error::{Error, Result};
use crate::numcore::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng::Rng;

/// Row layout of a padded batch as seen by attention: `valid[b]` real
/// positions (CLS included) at the top of each `width`-row slab.
#[derive(Clone, Debug)]
pub struct SeqLayout {
    pub width: usize,
    pub valid: Vec<usize>,
}

impl SeqLayout {
    pub fn single(len: usize) -> Self {
        Self { width: len, valid: vec![len] }
    }
}

#[derive(Clone, Debug)]
enum KindState {
    Plain,
    Performer(Tensor),
    Reformer(Vec<Tensor>),
    Linformer(ParamId),
    /// Per head: hidden weight, hidden bias, logit weight, logit bias.
    SynthDense(Vec<[ParamId; 4]>),
    SynthRandom(Vec<ParamId>),
}

/// One multi-head attention block with its own projections.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    id: usize,
    kind: AttentionKind,
    heads: usize,
    head_dim: usize,
    cfg: AttentionConfig,
    pub(crate) active: bool,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    state: KindState,
}

pub(crate) fn uniform_init(r: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let a = 1.0 / (fan_in as f64).sqrt();
    let d = Uniform::new_inclusive(-a, a).expect("finite bound");
    Tensor::from_fn(shape, |_| d.sample(r)).expect("positive shape").with_grad()
}

impl AttentionBlock {
    /// Registers the block's parameters under `prefix` in `store`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        store: &mut ParamStore,
        r: &mut Rng,
        prefix: &str,
        id: usize,
        kind: AttentionKind,
        heads: usize,
        embed_dim: usize,
        head_dim: usize,
        cfg: AttentionConfig,
    ) -> Result<Self> {
        if heads == 0 {
            return Err(Error::Config(format!("{kind} block with zero heads")));
        }
        cfg.validate()?;
        let inner = heads * head_dim;
        let mut add = |name: &str, t: Tensor| store.add(format!("{prefix}/{name}"), t);
        let wq = add("wq", uniform_init(r, &[embed_dim, inner], embed_dim));
        let wk = add("wk", uniform_init(r, &[embed_dim, inner], embed_dim));
        let wv = add("wv", uniform_init(r, &[embed_dim, inner], embed_dim));
        let wo = add("wo", uniform_init(r, &[inner, embed_dim], inner));
        let max_len = cfg.max_len;
        let p = &cfg.params;
        let state = match kind {
            AttentionKind::Performer => KindState::Performer(heads::performer_features(cfg.seed, p.num_features, head_dim)),
            AttentionKind::Reformer => {
                KindState::Reformer(heads::lsh_rotations(cfg.seed, p.num_hashes, head_dim, cfg.num_buckets()))
            }
            AttentionKind::Linformer => KindState::Linformer(add("proj", uniform_init(r, &[max_len, p.proj_rank], max_len))),
            AttentionKind::Synthesizer => match p.synth_mode {
                SynthMode::Dense => KindState::SynthDense(
                    (0..heads)
                        .map(|h| {
                            [
                                add(&format!("synth{h}/w1"), uniform_init(r, &[embed_dim, head_dim], embed_dim)),
                                add(&format!("synth{h}/b1"), Tensor::zeros(&[1, head_dim]).with_grad()),
                                add(&format!("synth{h}/w2"), uniform_init(r, &[head_dim, max_len], head_dim)),
                                add(&format!("synth{h}/b2"), Tensor::zeros(&[1, max_len]).with_grad()),
                            ]
                        })
                        .collect(),
                ),
                SynthMode::Random => KindState::SynthRandom(
                    (0..heads).map(|h| add(&format!("synth{h}/logits"), uniform_init(r, &[max_len, max_len], max_len))).collect(),
                ),
            },
            _ => KindState::Plain,
        };
        Ok(Self { id, kind, heads, head_dim, cfg, active: true, wq, wk, wv, wo, state })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn kind(&self) -> AttentionKind {
        self.kind
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.cfg
    }

    pub fn output_projection(&self) -> ParamId {
        self.wo
    }

    /// Query, key, value and output projections, in that order.
    pub fn projections(&self) -> [ParamId; 4] {
        [self.wq, self.wk, self.wv, self.wo]
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.projections().to_vec();
        match &self.state {
            KindState::Linformer(p) => ids.push(*p),
            KindState::SynthDense(hs) => ids.extend(hs.iter().flatten()),
            KindState::SynthRandom(hs) => ids.extend(hs),
            KindState::Plain | KindState::Performer(_) | KindState::Reformer(_) => {}
        }
        ids
    }

    /// Attention output for a padded batch `x` (`rows × embed_dim`, rows =
    /// slabs of `layout.width`). Padded rows never influence real rows.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, layout: &SeqLayout) -> Result<Var> {
        if !self.active {
            return Err(Error::InactiveBlock { index: self.id });
        }
        let w = layout.width;
        if w > self.cfg.max_len {
            return Err(Error::SequenceTooLong { len: w, max: self.cfg.max_len });
        }
        let (rows, _) = tape.shape(x);
        if rows != w * layout.valid.len() {
            return Err(Error::Shape(format!("{rows} rows do not form {} slabs of {w}", layout.valid.len())));
        }
        let [wq, wk, wv, wo] = self.projections().map(|id| tape.param(store, id));
        let q = tape.matmul(x, wq);
        let k = tape.matmul(x, wk);
        let v = tape.matmul(x, wv);
        let performer = match &self.state {
            KindState::Performer(f) => Some(tape.input(f)),
            _ => None,
        };
        let single = layout.valid.len() == 1;
        let mut slabs = Vec::with_capacity(layout.valid.len());
        for (b, &valid) in layout.valid.iter().enumerate() {
            let slab = |tape: &mut Tape, t: Var| if single { t } else { tape.slice_rows(t, b * w, w) };
            let (qb, kb, vb, xb) = (slab(tape, q), slab(tape, k), slab(tape, v), slab(tape, x));
            let padded = valid < w;
            let key_weights = padded.then(|| {
                let col: Vec<f64> = (0..w).map(|i| if i < valid { 1.0 } else { 0.0 }).collect();
                tape.constant(w, 1, col)
            });
            let pad_mask = padded.then(|| key_padding_mask(valid, w));
            let pattern = if self.kind.is_pattern() {
                Some(build_pattern_mask(self.kind, &self.cfg, valid)?.padded(w))
            } else {
                None
            };
            let mut outs = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let a = self.head_dim;
                let (qh, kh, vh) = if self.heads == 1 {
                    (qb, kb, vb)
                } else {
                    (tape.slice_cols(qb, h * a, a), tape.slice_cols(kb, h * a, a), tape.slice_cols(vb, h * a, a))
                };
                let out = match (&self.state, self.kind) {
                    (_, k) if k.is_pattern() => heads::dense_head(tape, qh, kh, vh, pattern.as_deref())?,
                    (_, AttentionKind::LinearTransformer) => heads::linear_head(tape, qh, kh, vh, key_weights)?,
                    (KindState::Performer(_), _) => {
                        heads::performer_head(tape, qh, kh, vh, performer.expect("features loaded"), key_weights, valid)?
                    }
                    (KindState::Linformer(p), _) => {
                        let proj = tape.param(store, *p);
                        let proj = tape.slice_rows(proj, 0, w);
                        heads::lowrank_head(tape, qh, kh, vh, proj, key_weights)?
                    }
                    (KindState::Reformer(rot), _) => {
                        let nb = self.cfg.num_buckets();
                        let bits = heads::lsh_mask(&tape.value(qh)[..valid * a], &tape.value(kh)[..valid * a], a, rot, nb, valid);
                        let mask = PatternMask::new(valid, bits)?.padded(w);
                        heads::dense_head(tape, qh, kh, vh, Some(&mask))?
                    }
                    (KindState::SynthDense(ps), _) => {
                        let [w1, b1, w2, b2] = ps[h].map(|id| tape.param(store, id));
                        let logits = heads::synth_dense_logits(tape, xb, w1, b1, w2, b2);
                        heads::synth_head(tape, logits, vh, pad_mask.as_deref())?
                    }
                    (KindState::SynthRandom(ps), _) => {
                        let table = tape.param(store, ps[h]);
                        let logits = heads::synth_random_logits(tape, table, w);
                        heads::synth_head(tape, logits, vh, pad_mask.as_deref())?
                    }
                    _ => heads::dense_head(tape, qh, kh, vh, pad_mask.as_deref())?,
                };
                outs.push(out);
            }
            slabs.push(if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs) });
        }
        let cat = if slabs.len() == 1 { slabs[0] } else { tape.concat_rows(&slabs) };
        Ok(tape.matmul(cat, wo))
    }
}
