//! Nested prefix list operations over the digits 0-9.
//!
//! `[MAX 2 [MIN 4 7] 0]` evaluates to 4. Token ids: `]` is the first task
//! symbol, then the four operators, then the digits.

use rand::Rng as _;

use super::{balanced_labels, Dataset, Example, TaskSpec, FIRST_SYMBOL};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub(super) const SYMBOLS: usize = 1 + 4 + 10;
const CLOSE: u32 = FIRST_SYMBOL;
const FIRST_OP: u32 = FIRST_SYMBOL + 1;
const FIRST_DIGIT: u32 = FIRST_SYMBOL + 5;

/// Attempts per example before giving up on a label/length combination.
const MAX_TRIES: usize = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ListopsOp {
    Max,
    Min,
    /// Lower median.
    Med,
    /// Sum modulo 10.
    Sm,
}

impl ListopsOp {
    const ALL: [ListopsOp; 4] = [ListopsOp::Max, ListopsOp::Min, ListopsOp::Med, ListopsOp::Sm];

    pub fn token(self) -> u32 {
        FIRST_OP + self as u32
    }

    pub fn name(self) -> &'static str {
        match self {
            ListopsOp::Max => "[MAX",
            ListopsOp::Min => "[MIN",
            ListopsOp::Med => "[MED",
            ListopsOp::Sm => "[SM",
        }
    }

    fn from_token(t: u32) -> Option<Self> {
        t.checked_sub(FIRST_OP).and_then(|i| Self::ALL.get(i as usize).copied())
    }

    pub fn apply(self, args: &[usize]) -> usize {
        match self {
            ListopsOp::Max => *args.iter().max().expect("operator without arguments"),
            ListopsOp::Min => *args.iter().min().expect("operator without arguments"),
            ListopsOp::Med => {
                let mut s = args.to_vec();
                s.sort_unstable();
                s[(s.len() - 1) / 2]
            }
            ListopsOp::Sm => args.iter().sum::<usize>() % 10,
        }
    }
}

pub fn digit_token(d: usize) -> u32 {
    FIRST_DIGIT + d as u32
}

/// Tokenizes text such as `"[MAX 2 9 0]"`.
pub fn parse_listops(text: &str) -> Result<Vec<u32>> {
    let spaced = text.replace(']', " ] ");
    spaced
        .split_whitespace()
        .map(|w| match w {
            "]" => Ok(CLOSE),
            d if d.len() == 1 && d.as_bytes()[0].is_ascii_digit() => Ok(digit_token((d.as_bytes()[0] - b'0') as usize)),
            op => ListopsOp::ALL
                .iter()
                .find(|o| o.name() == op)
                .map(|o| o.token())
                .ok_or_else(|| Error::Parse(format!("unknown listops token {op:?}"))),
        })
        .collect()
}

pub fn listops_to_string(tokens: &[u32]) -> String {
    let words: Vec<String> = tokens
        .iter()
        .map(|&t| match t {
            CLOSE => "]".to_string(),
            t if t >= FIRST_DIGIT && t < FIRST_DIGIT + 10 => (t - FIRST_DIGIT).to_string(),
            t => ListopsOp::from_token(t).map_or_else(|| format!("<{t}>"), |o| o.name().to_string()),
        })
        .collect();
    words.join(" ").replace(" ]", "]")
}

/// Stack evaluation of a tokenized expression.
pub fn eval_listops(tokens: &[u32]) -> Result<usize> {
    let bad = || Error::Parse(format!("malformed listops expression {}", listops_to_string(tokens)));
    let mut frames: Vec<(ListopsOp, Vec<usize>)> = Vec::new();
    let mut result = None;
    for &t in tokens {
        if result.is_some() {
            return Err(bad());
        }
        let value = if t == CLOSE {
            let (op, args) = frames.pop().ok_or_else(bad)?;
            if args.is_empty() {
                return Err(bad());
            }
            op.apply(&args)
        } else if let Some(op) = ListopsOp::from_token(t) {
            frames.push((op, Vec::new()));
            continue;
        } else if (FIRST_DIGIT..FIRST_DIGIT + 10).contains(&t) {
            (t - FIRST_DIGIT) as usize
        } else {
            return Err(bad());
        };
        match frames.last_mut() {
            Some((_, args)) => args.push(value),
            None => result = Some(value),
        }
    }
    if !frames.is_empty() {
        return Err(bad());
    }
    result.ok_or_else(bad)
}

fn random_expr(spec: &TaskSpec, depth: usize, r: &mut Rng, out: &mut Vec<u32>) {
    let k = &spec.listops;
    out.push(ListopsOp::ALL[r.random_range(0..4)].token());
    let nargs = r.random_range(k.max_args.min(2)..=k.max_args);
    for _ in 0..nargs {
        if depth < k.max_depth && r.random_bool(k.nest_prob) {
            random_expr(spec, depth + 1, r, out);
        } else {
            out.push(digit_token(r.random_range(0..10)));
        }
    }
    out.push(CLOSE);
}

pub(super) fn generate(spec: &TaskSpec, size: usize, r: &mut Rng) -> Result<Dataset> {
    let targets = balanced_labels(size, 10, r);
    let mut examples = Vec::with_capacity(size);
    let mut tokens = Vec::new();
    for target in targets {
        let mut found = false;
        for _ in 0..MAX_TRIES {
            tokens.clear();
            random_expr(spec, 1, r, &mut tokens);
            if tokens.len() <= spec.max_seq_len && eval_listops(&tokens)? == target {
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::Generation(format!(
                "no listops expression with value {target} fits in {} tokens",
                spec.max_seq_len
            )));
        }
        examples.push(Example { tokens: tokens.clone(), label: target, segment: None });
    }
    Ok(Dataset { examples })
}
