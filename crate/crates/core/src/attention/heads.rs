//! Single-head attention kernels recorded on a [`Tape`].
//!
//! Every function takes one head's `(seq × head_dim)` query, key and value
//! matrices. Padding is expressed either as a boolean mask (softmax kinds) or
//! as a `seq × 1` column of 1/0 key weights (kernel and low-rank kinds).

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Var};
use crate::rng;

/// `softmax(q kᵀ / sqrt(d)) v` with an optional mask applied before the softmax.
pub fn dense_head(tape: &mut Tape, q: Var, k: Var, v: Var, mask: Option<&[bool]>) -> Result<Var> {
    let d = tape.shape(q).1;
    let scores = tape.matmul_nt(q, k);
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let weights = tape.softmax_rows(scores, mask)?;
    Ok(tape.matmul(weights, v))
}

/// `φ(q) (φ(k)ᵀ v) / (φ(q) (φ(k)ᵀ 1))`, linear in sequence length.
fn normalized_kernel(tape: &mut Tape, phi_q: Var, phi_k: Var, v: Var, key_weights: Option<Var>) -> Result<Var> {
    let phi_k = match key_weights {
        Some(w) => tape.mul_col(phi_k, w),
        None => phi_k,
    };
    let n = tape.shape(phi_k).0;
    let kv = tape.matmul_tn(phi_k, v);
    let num = tape.matmul(phi_q, kv);
    let ones = tape.constant(n, 1, vec![1.0; n]);
    let ksum = tape.matmul_tn(phi_k, ones);
    let den = tape.matmul(phi_q, ksum);
    tape.div_col(num, den).map_err(|_| Error::NonFinite("kernel attention normalizer is not positive".into()))
}

/// Linear Transformer: feature map `elu(x) + 1`.
pub fn linear_head(tape: &mut Tape, q: Var, k: Var, v: Var, key_weights: Option<Var>) -> Result<Var> {
    let phi_q = tape.elu_plus_one(q);
    let phi_k = tape.elu_plus_one(k);
    normalized_kernel(tape, phi_q, phi_k, v, key_weights)
}

/// Performer positive random features approximating the softmax kernel of
/// `dense_head`: `φ(x) = exp(x' Wᵀ - |x'|²/2) / sqrt(m)` with `x' = x / d^(1/4)`.
///
/// `features` is the fixed `m × d` matrix of standard-normal rows. Only the
/// first `valid` rows are real keys. Row maxima (queries) and a global
/// maximum (keys) are subtracted before exponentiating; both cancel in the
/// normalization.
pub fn performer_head(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    features: Var,
    key_weights: Option<Var>,
    valid: usize,
) -> Result<Var> {
    let phi_q = performer_features_map(tape, q, features, None);
    let phi_k = performer_features_map(tape, k, features, Some(valid));
    normalized_kernel(tape, phi_q, phi_k, v, key_weights)
}

fn performer_features_map(tape: &mut Tape, x: Var, features: Var, global_over: Option<usize>) -> Var {
    let (n, d) = tape.shape(x);
    let m = tape.shape(features).0;
    let xs = tape.scale(x, (d as f64).powf(-0.25));
    let proj = tape.matmul_nt(xs, features);
    let sq = tape.row_sq_norm(xs);
    let half = tape.scale(sq, -0.5);
    let z = tape.add_col(proj, half);
    let zv = tape.value(z);
    let shift: Vec<f64> = match global_over {
        None => zv.chunks(m).map(|row| -row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect(),
        Some(valid) => {
            let g = zv[..valid.max(1) * m].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            vec![-g; n]
        }
    };
    let shift = tape.constant(n, 1, shift);
    let z = tape.add_col(z, shift);
    let e = tape.exp(z);
    tape.scale(e, 1.0 / (m as f64).sqrt())
}

/// Linformer: keys and values are mixed along the sequence axis by
/// `proj` (`seq × rank`) before dense attention over `rank` summaries.
pub fn lowrank_head(tape: &mut Tape, q: Var, k: Var, v: Var, proj: Var, key_weights: Option<Var>) -> Result<Var> {
    let (k, v) = match key_weights {
        Some(w) => (tape.mul_col(k, w), tape.mul_col(v, w)),
        None => (k, v),
    };
    let kp = tape.matmul_tn(proj, k);
    let vp = tape.matmul_tn(proj, v);
    dense_head(tape, q, kp, vp, None)
}

/// Synthesizer: `softmax(logits) v` with logits that never involve `q kᵀ`.
pub fn synth_head(tape: &mut Tape, logits: Var, v: Var, mask: Option<&[bool]>) -> Result<Var> {
    let weights = tape.softmax_rows(logits, mask)?;
    Ok(tape.matmul(weights, v))
}

/// Dense-mode Synthesizer logits: a per-position two-layer MLP whose output
/// row is truncated to the current length.
pub fn synth_dense_logits(tape: &mut Tape, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Var {
    let n = tape.shape(x).0;
    let h = tape.matmul(x, w1);
    let h = tape.add_row(h, b1);
    let h = tape.relu(h);
    let l = tape.matmul(h, w2);
    let l = tape.add_row(l, b2);
    tape.slice_cols(l, 0, n)
}

/// Random-mode Synthesizer logits: the top-left `n × n` block of a free matrix.
pub fn synth_random_logits(tape: &mut Tape, table: Var, n: usize) -> Var {
    let rows = tape.slice_rows(table, 0, n);
    tape.slice_cols(rows, 0, n)
}

/// Standard-normal Performer projection rows (`num_features × dim`).
pub fn performer_features(seed: u64, num_features: usize, dim: usize) -> Tensor {
    let mut r = rng::stream(rng::derive_seed(seed, "performer"), 0);
    Tensor::from_fn(&[num_features, dim], |_| StandardNormal.sample(&mut r)).expect("positive feature shape")
}

/// One `dim × ceil(buckets/2)` random rotation per hash round.
pub fn lsh_rotations(seed: u64, num_hashes: usize, dim: usize, num_buckets: usize) -> Vec<Tensor> {
    let half = num_buckets.div_ceil(2).max(1);
    (0..num_hashes)
        .map(|round| {
            let mut r = rng::stream(rng::derive_seed(seed, "reformer"), round as u64);
            Tensor::from_fn(&[dim, half], |_| StandardNormal.sample(&mut r)).expect("positive rotation shape")
        })
        .collect()
}

/// Angular LSH: argmax over `[xR, -xR]` truncated to `num_buckets`; ties go
/// to the lowest bucket index.
pub fn lsh_buckets(x: &[f64], dim: usize, rotation: &Tensor, num_buckets: usize) -> Vec<usize> {
    if num_buckets <= 1 {
        return vec![0; x.len() / dim];
    }
    let half = rotation.shape()[1];
    let r = rotation.data();
    x.chunks(dim)
        .map(|row| {
            let mut best = (0, f64::NEG_INFINITY);
            for b in 0..num_buckets {
                let col = b % half;
                let proj: f64 = row.iter().enumerate().map(|(p, &xp)| xp * r[p * half + col]).sum();
                let score = if b < half { proj } else { -proj };
                if score > best.1 {
                    best = (b, score);
                }
            }
            best.0
        })
        .collect()
}

/// Row-major `n × n` mask of the bucket union over all rounds. Query `i`
/// always sees itself; only the first `valid` keys are real.
pub fn lsh_mask(q: &[f64], k: &[f64], dim: usize, rotations: &[Tensor], num_buckets: usize, valid: usize) -> Vec<bool> {
    let n = q.len() / dim;
    let mut bits = vec![false; n * n];
    for i in 0..n {
        bits[i * n + i] = true;
    }
    for rot in rotations {
        let bq = lsh_buckets(q, dim, rot, num_buckets);
        let bk = lsh_buckets(k, dim, rot, num_buckets);
        for i in 0..valid.min(n) {
            for j in 0..valid.min(n) {
                if bq[i] == bk[j] {
                    bits[i * n + j] = true;
                }
            }
        }
    }
    debug_assert!((0..n).all(|i| bits[i * n + i]));
    bits
}
