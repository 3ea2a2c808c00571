//! Paired-sequence matching: `A SEP B`, positive iff B is a token-dropped copy of A.

use rand::Rng as _;

use super::{balanced_labels, Dataset, Example, TaskSpec, FIRST_SYMBOL, SEP};
use crate::error::{Error, Result};
use crate::rng::Rng;

const MAX_TRIES: usize = 10_000;

/// Whether `needle` can be obtained from `hay` by deleting tokens.
pub fn is_subsequence(needle: &[u32], hay: &[u32]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|t| it.any(|h| h == t))
}

fn draw(r: &mut Rng, lo: u32, hi: u32, n: usize) -> Vec<u32> {
    (0..n).map(|_| FIRST_SYMBOL + r.random_range(lo..hi)).collect()
}

fn dropped(a: &[u32], rate: f64, r: &mut Rng) -> Vec<u32> {
    loop {
        let b: Vec<u32> = a.iter().copied().filter(|_| !r.random_bool(rate)).collect();
        if !b.is_empty() {
            return b;
        }
    }
}

pub(super) fn generate(spec: &TaskSpec, size: usize, r: &mut Rng) -> Result<Dataset> {
    let m = &spec.matching;
    let alphabet = m.alphabet as u32;
    let (a_range, neg_range) = if m.disjoint_negatives {
        ((0, alphabet / 2), (alphabet / 2, alphabet))
    } else {
        ((0, alphabet), (0, alphabet))
    };
    let targets = balanced_labels(size, 2, r);
    let mut examples = Vec::with_capacity(size);
    for label in targets {
        let n = r.random_range(spec.min_len()..=spec.max_seq_len);
        let la = ((n - 1) / 2).max(1);
        let a = draw(r, a_range.0, a_range.1, la);
        // Negatives get the same length distribution as positives.
        let shape = dropped(&a, m.corruption_rate, r);
        let b = if label == 1 {
            shape
        } else {
            (0..MAX_TRIES)
                .map(|_| draw(r, neg_range.0, neg_range.1, shape.len()))
                .find(|b| !is_subsequence(b, &a))
                .ok_or_else(|| Error::Generation("could not draw a non-matching segment".into()))?
        };
        let mut tokens = a;
        tokens.push(SEP);
        tokens.extend(b);
        examples.push(Example { tokens, label, segment: Some(la) });
    }
    Ok(Dataset { examples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsequence_checks() {
        assert!(is_subsequence(&[1, 3], &[1, 2, 3]));
        assert!(is_subsequence(&[], &[1]));
        assert!(!is_subsequence(&[3, 1], &[1, 2, 3]));
        assert!(!is_subsequence(&[1, 1], &[1, 2]));
    }
}
