//! Binary motif detection in uniform symbol noise.
//!
//! The motif's symbols are distinct and never drawn as noise, so a sequence
//! is positive exactly when every motif symbol sits at its motif position.

use rand::seq::index::sample;
use rand::Rng as _;

use super::{balanced_labels, Dataset, Example, MotifLayout, TaskSpec, FIRST_SYMBOL, TASK_STREAM};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

const MAX_TRIES: usize = 10_000;

/// The task's motif, shared by every split.
pub fn motif_for(spec: &TaskSpec) -> Vec<u32> {
    let mut r = rng::stream(super::task_seed(spec), TASK_STREAM);
    let b = &spec.bytecls;
    sample(&mut r, b.alphabet, b.motif_len.min(b.alphabet)).into_iter().map(|i| FIRST_SYMBOL + i as u32).collect()
}

/// A uniform symbol outside the motif.
fn noise(spec: &TaskSpec, motif: &[u32], r: &mut Rng) -> u32 {
    loop {
        let s = FIRST_SYMBOL + r.random_range(0..spec.bytecls.alphabet as u32);
        if !motif.contains(&s) {
            return s;
        }
    }
}

fn contains(hay: &[u32], needle: &[u32]) -> bool {
    needle.is_empty() || hay.windows(needle.len()).any(|w| w == needle)
}

fn halves(motif: &[u32]) -> (&[u32], &[u32]) {
    motif.split_at(motif.len().div_ceil(2))
}

/// Whether `tokens` carries the motif under `layout`. For the global layout
/// the first half must lie entirely in the first half of the sequence and
/// the second half entirely in the rest.
pub fn find_motif(tokens: &[u32], motif: &[u32], layout: MotifLayout) -> bool {
    match layout {
        MotifLayout::Local => contains(tokens, motif),
        MotifLayout::Global => {
            let (a, b) = halves(motif);
            let (left, right) = tokens.split_at(tokens.len() / 2);
            contains(left, a) && contains(right, b)
        }
    }
}

/// A copy of `part` with one position replaced by a noise symbol.
fn corrupt(spec: &TaskSpec, motif: &[u32], part: &[u32], r: &mut Rng) -> Vec<u32> {
    let mut out = part.to_vec();
    if !out.is_empty() {
        let at = r.random_range(0..out.len());
        out[at] = noise(spec, motif, r);
    }
    out
}

fn place(tokens: &mut [u32], part: &[u32], lo: usize, hi: usize, r: &mut Rng) {
    // `part` starts somewhere in [lo, hi - part.len()].
    let start = r.random_range(lo..=hi - part.len());
    tokens[start..start + part.len()].copy_from_slice(part);
}

fn candidate(spec: &TaskSpec, motif: &[u32], positive: bool, r: &mut Rng) -> Vec<u32> {
    let b = &spec.bytecls;
    let n = r.random_range(spec.min_len()..=spec.max_seq_len);
    let mut tokens: Vec<u32> = (0..n).map(|_| noise(spec, motif, r)).collect();
    match b.layout {
        MotifLayout::Local => {
            let part = if positive { motif.to_vec() } else { corrupt(spec, motif, motif, r) };
            match (b.fixed_position, b.motif_span) {
                (Some(p), _) => tokens[p..p + part.len()].copy_from_slice(&part),
                (None, Some(span)) => place(&mut tokens, &part, 0, span.min(n), r),
                (None, None) => place(&mut tokens, &part, 0, n, r),
            }
        }
        MotifLayout::Global => {
            let (a, bh) = halves(motif);
            let (mut a, mut bh) = (a.to_vec(), bh.to_vec());
            if !positive {
                if r.random_bool(0.5) && !bh.is_empty() {
                    bh = corrupt(spec, motif, &bh, r);
                } else {
                    a = corrupt(spec, motif, &a, r);
                }
            }
            place(&mut tokens, &a, 0, n / 2, r);
            place(&mut tokens, &bh, n / 2, n, r);
        }
    }
    tokens
}

pub(super) fn generate(spec: &TaskSpec, motif: &[u32], size: usize, r: &mut Rng) -> Result<Dataset> {
    let targets = balanced_labels(size, 2, r);
    let mut examples = Vec::with_capacity(size);
    for label in targets {
        let tokens = if motif.is_empty() {
            // No signal: content is independent of the label.
            let n = r.random_range(spec.min_len()..=spec.max_seq_len);
            (0..n).map(|_| FIRST_SYMBOL + r.random_range(0..spec.bytecls.alphabet as u32)).collect()
        } else {
            let positive = label == 1;
            (0..MAX_TRIES)
                .map(|_| candidate(spec, motif, positive, r))
                .find(|t| find_motif(t, motif, spec.bytecls.layout) == positive)
                .ok_or_else(|| Error::Generation("could not place the bytecls motif".into()))?
        };
        examples.push(Example { tokens, label, segment: None });
    }
    flip_labels(&mut examples, spec.bytecls.corruption_rate, r);
    Ok(Dataset { examples })
}

/// Flips `floor(rate · count)` labels in each class, keeping the split balanced.
fn flip_labels(examples: &mut [Example], rate: f64, r: &mut Rng) {
    if rate <= 0.0 {
        return;
    }
    // Classes are fixed before any flip so nothing is flipped twice.
    let by_class: Vec<Vec<usize>> = (0..2).map(|c| (0..examples.len()).filter(|&i| examples[i].label == c).collect()).collect();
    for (class, members) in by_class.iter().enumerate() {
        let k = (rate * members.len() as f64).floor() as usize;
        for i in sample(r, members.len(), k) {
            examples[members[i]].label = 1 - class;
        }
    }
}
