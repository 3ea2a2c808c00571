//! Stand-alone attention over `(heads, seq, head_dim)` tensors.

use super::heads;
use super::kind::{AttentionConfig, AttentionKind, SynthMode};
use super::mask::PatternMask;
use crate::error::{Error, Result};
use crate::numcore::{kernels, Tape, Tensor, Var};

fn check_qkv(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(usize, usize, usize)> {
    let (h, n, d) = q.dims3()?;
    let (kh, kn, kd) = k.dims3()?;
    let (vh, vn, _) = v.dims3()?;
    if (kh, kn, kd) != (h, n, d) || (vh, vn) != (h, n) {
        return Err(Error::Shape(format!(
            "q {:?}, k {:?}, v {:?} are not compatible",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if !(q.is_finite() && k.is_finite() && v.is_finite()) {
        return Err(Error::NonFinite("attention inputs".into()));
    }
    Ok((h, n, d))
}

fn check_mask(mask: &PatternMask, n: usize) -> Result<()> {
    if mask.len() != n {
        return Err(Error::Shape(format!("mask covers {} positions, sequence has {n}", mask.len())));
    }
    Ok(())
}

/// Runs `f` on each head's matrices and stacks the per-head outputs.
fn per_head(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mut f: impl FnMut(&mut Tape, usize, Var, Var, Var) -> Result<Var>,
) -> Result<Tensor> {
    let heads = q.shape()[0];
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let mut tape = Tape::new();
        let qh = tape.input(&q.slab(h)?);
        let kh = tape.input(&k.slab(h)?);
        let vh = tape.input(&v.slab(h)?);
        let out = f(&mut tape, h, qh, kh, vh)?;
        outs.push(tape.to_tensor(out));
    }
    Tensor::stack(&outs)
}

/// Scaled dot-product attention, the reference every other kind is checked against.
pub fn dense_attention(q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<&PatternMask>) -> Result<Tensor> {
    let (_, n, _) = check_qkv(q, k, v)?;
    if let Some(m) = mask {
        check_mask(m, n)?;
    }
    per_head(q, k, v, |tape, _, qh, kh, vh| heads::dense_head(tape, qh, kh, vh, mask.map(PatternMask::as_slice)))
}

/// Masked attention computed row by row over the allowed keys only.
pub fn pattern_attention(q: &Tensor, k: &Tensor, v: &Tensor, mask: &PatternMask) -> Result<Tensor> {
    let (h, n, d) = check_qkv(q, k, v)?;
    check_mask(mask, n)?;
    let dv = v.shape()[2];
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; h * n * dv];
    let mut keys = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for head in 0..h {
        let (qh, kh, vh) = (&q.data()[head * n * d..], &k.data()[head * n * d..], &v.data()[head * n * dv..]);
        for i in 0..n {
            keys.clear();
            keys.extend((0..n).filter(|&j| mask.allows(i, j)));
            if keys.is_empty() {
                return Err(Error::DegenerateRow { row: i });
            }
            scores.clear();
            scores.extend(keys.iter().map(|&j| kernels::dot(&qh[i * d..(i + 1) * d], &kh[j * d..(j + 1) * d]) * scale));
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            scores.iter_mut().for_each(|s| *s = (*s - max).exp());
            let total: f64 = scores.iter().sum();
            let orow = &mut out[(head * n + i) * dv..(head * n + i + 1) * dv];
            for (&j, &w) in keys.iter().zip(&scores) {
                let w = w / total;
                orow.iter_mut().zip(&vh[j * dv..(j + 1) * dv]).for_each(|(o, x)| *o += w * x);
            }
        }
    }
    Tensor::new(vec![h, n, dv], out)
}

/// Linear Transformer or Performer attention, linear in sequence length.
pub fn kernel_attention(q: &Tensor, k: &Tensor, v: &Tensor, kind: AttentionKind, cfg: &AttentionConfig) -> Result<Tensor> {
    let (_, n, d) = check_qkv(q, k, v)?;
    match kind {
        AttentionKind::LinearTransformer => per_head(q, k, v, |tape, _, qh, kh, vh| heads::linear_head(tape, qh, kh, vh, None)),
        AttentionKind::Performer => {
            if cfg.params.num_features == 0 {
                return Err(Error::Config("performer needs num_features >= 1".into()));
            }
            let w = heads::performer_features(cfg.seed, cfg.params.num_features, d);
            per_head(q, k, v, |tape, _, qh, kh, vh| {
                let wv = tape.input(&w);
                heads::performer_head(tape, qh, kh, vh, wv, None, n)
            })
        }
        other => Err(Error::Config(format!("{other} is not a kernel attention"))),
    }
}

/// Linformer attention with an explicit `seq × proj_rank` projection shared by keys and values.
pub fn lowrank_attention(q: &Tensor, k: &Tensor, v: &Tensor, proj: &Tensor, cfg: &AttentionConfig) -> Result<Tensor> {
    let (_, n, _) = check_qkv(q, k, v)?;
    let rank = cfg.params.proj_rank;
    if rank == 0 {
        return Err(Error::Config("proj_rank must be positive".into()));
    }
    if rank > n {
        return Err(Error::Config(format!("proj_rank {rank} exceeds sequence length {n}")));
    }
    if proj.shape() != [n, rank] {
        return Err(Error::Shape(format!("projection {:?} is not {n}x{rank}", proj.shape())));
    }
    per_head(q, k, v, |tape, _, qh, kh, vh| {
        let p = tape.input(proj);
        heads::lowrank_head(tape, qh, kh, vh, p, None)
    })
}

/// One head of a dense-mode Synthesizer: `relu(x w1 + b1) w2 + b2`.
#[derive(Clone, Debug)]
pub struct DenseSynthHead {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Synthesizer weights for every head, sized to a maximum sequence length.
#[derive(Clone, Debug)]
pub enum SynthWeights {
    Dense(Vec<DenseSynthHead>),
    /// One `max_len × max_len` logit matrix per head.
    Random(Vec<Tensor>),
}

impl SynthWeights {
    pub fn heads(&self) -> usize {
        match self {
            SynthWeights::Dense(h) => h.len(),
            SynthWeights::Random(h) => h.len(),
        }
    }

    pub fn max_len(&self) -> usize {
        match self {
            SynthWeights::Dense(h) => h.first().map_or(0, |w| w.w2.shape()[1]),
            SynthWeights::Random(h) => h.first().map_or(0, |t| t.shape()[0]),
        }
    }

    pub fn mode(&self) -> SynthMode {
        match self {
            SynthWeights::Dense(_) => SynthMode::Dense,
            SynthWeights::Random(_) => SynthMode::Random,
        }
    }
}

/// Synthesizer attention: weights come from `x` alone (dense mode) or from a
/// free matrix (random mode), never from a query-key product.
pub fn synthetic_attention(x: &Tensor, v: &Tensor, weights: &SynthWeights, cfg: &AttentionConfig) -> Result<Tensor> {
    let (n, _) = x.dims2()?;
    let (h, vn, _) = v.dims3()?;
    if vn != n || weights.heads() != h {
        return Err(Error::Shape(format!("x {:?}, v {:?}, {} weight heads", x.shape(), v.shape(), weights.heads())));
    }
    if weights.mode() != cfg.params.synth_mode {
        return Err(Error::Config("synthesizer weights do not match synth_mode".into()));
    }
    let max = weights.max_len();
    if n > max {
        return Err(Error::SequenceTooLong { len: n, max });
    }
    let mut outs = Vec::with_capacity(h);
    for head in 0..h {
        let mut tape = Tape::new();
        let vh = tape.input(&v.slab(head)?);
        let logits = match weights {
            SynthWeights::Dense(ws) => {
                let w = &ws[head];
                let xv = tape.input(x);
                let (w1, b1, w2, b2) = (tape.input(&w.w1), tape.input(&w.b1), tape.input(&w.w2), tape.input(&w.b2));
                heads::synth_dense_logits(&mut tape, xv, w1, b1, w2, b2)
            }
            SynthWeights::Random(ts) => {
                let t = tape.input(&ts[head]);
                heads::synth_random_logits(&mut tape, t, n)
            }
        };
        let out = heads::synth_head(&mut tape, logits, vh, None)?;
        outs.push(tape.to_tensor(out));
    }
    Tensor::stack(&outs)
}

/// The per-head masks Reformer attention induces: the union over hash rounds
/// of same-bucket query/key pairs, plus the diagonal.
pub fn lsh_patterns(q: &Tensor, k: &Tensor, cfg: &AttentionConfig) -> Result<Vec<PatternMask>> {
    let (h, n, d) = q.dims3()?;
    if k.shape() != q.shape() {
        return Err(Error::Shape("q and k differ in shape".into()));
    }
    if cfg.params.num_hashes == 0 || cfg.params.bucket_size == 0 {
        return Err(Error::Config("num_hashes and bucket_size must be positive".into()));
    }
    if n > cfg.max_len {
        return Err(Error::SequenceTooLong { len: n, max: cfg.max_len });
    }
    let nb = cfg.num_buckets();
    let rot = heads::lsh_rotations(cfg.seed, cfg.params.num_hashes, d, nb);
    (0..h)
        .map(|head| {
            let qs = &q.data()[head * n * d..(head + 1) * n * d];
            let ks = &k.data()[head * n * d..(head + 1) * n * d];
            PatternMask::new(n, heads::lsh_mask(qs, ks, d, &rot, nb, n))
        })
        .collect()
}

/// Simplified Reformer: single-layer LSH-bucketed attention without shared QK.
pub fn lsh_attention(q: &Tensor, k: &Tensor, v: &Tensor, cfg: &AttentionConfig) -> Result<Tensor> {
    check_qkv(q, k, v)?;
    let masks = lsh_patterns(q, k, cfg)?;
    per_head(q, k, v, |tape, h, qh, kh, vh| heads::dense_head(tape, qh, kh, vh, Some(masks[h].as_slice())))
}
