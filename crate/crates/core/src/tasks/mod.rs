//! Seeded synthetic sequence-classification tasks.
//!
//! Every task reserves ids [`PAD`], [`CLS`] and [`SEP`]; task symbols start at
//! [`FIRST_SYMBOL`]. Each split is drawn from its own ChaCha8 stream keyed by
//! `(derive_seed(seed, "task/<name>"), split)`, so datasets are byte-identical
//! across runs and platforms. Labels are exactly balanced per split.

mod bytecls;
mod listops;
mod matching;

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bytecls::{find_motif, motif_for};
pub use listops::{eval_listops, listops_to_string, parse_listops, ListopsOp};
pub use matching::is_subsequence;

use crate::error::{Error, Result};
use crate::rng;

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const SEP: u32 = 2;
pub const FIRST_SYMBOL: u32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Listops,
    Bytecls,
    Match,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Listops => "listops",
            TaskKind::Bytecls => "bytecls",
            TaskKind::Match => "match",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ListopsKnobs {
    pub max_depth: usize,
    pub max_args: usize,
    /// Probability that an argument below `max_depth` is a nested expression.
    pub nest_prob: f64,
}

impl Default for ListopsKnobs {
    fn default() -> Self {
        Self { max_depth: 3, max_args: 4, nest_prob: 0.3 }
    }
}

/// Where the motif lives in a bytecls sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotifLayout {
    /// The whole motif appears contiguously somewhere.
    #[default]
    Local,
    /// The first half sits in the first half of the sequence and the second
    /// half in the second, so both ends must be related.
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ByteclsKnobs {
    pub motif_len: usize,
    pub layout: MotifLayout,
    /// Fixed start of the motif (local layout); random when unset.
    pub fixed_position: Option<usize>,
    /// Keeps a randomly placed local motif inside the first `motif_span` positions.
    pub motif_span: Option<usize>,
    /// Number of distinct noise symbols.
    pub alphabet: usize,
    /// Fraction of labels flipped after generation.
    pub corruption_rate: f64,
}

impl Default for ByteclsKnobs {
    fn default() -> Self {
        Self { motif_len: 4, layout: MotifLayout::Local, fixed_position: None, motif_span: None, alphabet: 16, corruption_rate: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchKnobs {
    /// Per-token drop probability when deriving a positive second segment.
    pub corruption_rate: f64,
    pub alphabet: usize,
    /// Draw first segments from the lower half of the alphabet and negatives
    /// from the upper half.
    pub disjoint_negatives: bool,
}

impl Default for MatchKnobs {
    fn default() -> Self {
        Self { corruption_rate: 0.1, alphabet: 16, disjoint_negatives: false }
    }
}

/// A synthetic task generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: TaskKind,
    #[serde(default = "default_max_len")]
    pub max_seq_len: usize,
    /// Shortest generated sequence; half of `max_seq_len` when unset.
    #[serde(default)]
    pub min_seq_len: Option<usize>,
    #[serde(default = "default_train")]
    pub train_size: usize,
    #[serde(default = "default_eval")]
    pub val_size: usize,
    #[serde(default = "default_eval")]
    pub test_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub listops: ListopsKnobs,
    #[serde(default)]
    pub bytecls: ByteclsKnobs,
    #[serde(default, rename = "match")]
    pub matching: MatchKnobs,
}

fn default_max_len() -> usize {
    128
}
fn default_train() -> usize {
    2000
}
fn default_eval() -> usize {
    500
}

impl TaskSpec {
    pub fn new(name: TaskKind) -> Self {
        Self {
            name,
            max_seq_len: default_max_len(),
            min_seq_len: None,
            train_size: default_train(),
            val_size: default_eval(),
            test_size: default_eval(),
            seed: 0,
            listops: ListopsKnobs::default(),
            bytecls: ByteclsKnobs::default(),
            matching: MatchKnobs::default(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        FIRST_SYMBOL as usize
            + match self.name {
                TaskKind::Listops => listops::SYMBOLS,
                TaskKind::Bytecls => self.bytecls.alphabet,
                TaskKind::Match => self.matching.alphabet,
            }
    }

    pub fn num_classes(&self) -> usize {
        match self.name {
            TaskKind::Listops => 10,
            TaskKind::Bytecls | TaskKind::Match => 2,
        }
    }

    pub fn min_len(&self) -> usize {
        self.min_seq_len.unwrap_or(self.max_seq_len / 2).clamp(1, self.max_seq_len)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("task {}: {m}", self.name.name())));
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be positive".into());
        }
        if self.min_seq_len.is_some_and(|m| m > self.max_seq_len) {
            return bad("min_seq_len exceeds max_seq_len".into());
        }
        match self.name {
            TaskKind::Listops => {
                if self.listops.max_depth == 0 {
                    return bad("max_depth must be at least 1".into());
                }
                if self.listops.max_args == 0 {
                    return bad("max_args must be at least 1".into());
                }
                if !(0.0..=1.0).contains(&self.listops.nest_prob) {
                    return bad("nest_prob must lie in [0, 1]".into());
                }
                if self.max_seq_len < 3 {
                    return bad("listops needs max_seq_len >= 3".into());
                }
            }
            TaskKind::Bytecls => {
                let b = &self.bytecls;
                if b.alphabet < b.motif_len + 1 || b.alphabet < 2 {
                    return bad("alphabet needs more symbols than the motif".into());
                }
                if b.motif_span.is_some_and(|s| s < b.motif_len) {
                    return bad("motif_span is shorter than the motif".into());
                }
                if !(0.0..=0.5).contains(&b.corruption_rate) {
                    return bad("corruption_rate must lie in [0, 0.5]".into());
                }
                let need = match b.layout {
                    MotifLayout::Local => b.motif_len + b.fixed_position.unwrap_or(0),
                    MotifLayout::Global => 2 * b.motif_len.div_ceil(2),
                };
                if need > self.min_len() {
                    return bad(format!("motif needs {need} positions but sequences may be {} long", self.min_len()));
                }
            }
            TaskKind::Match => {
                let m = &self.matching;
                if m.alphabet < 2 || (m.disjoint_negatives && m.alphabet < 4) {
                    return bad("alphabet too small".into());
                }
                if !(0.0..1.0).contains(&m.corruption_rate) {
                    return bad("corruption_rate must lie in [0, 1)".into());
                }
                if self.min_len() < 3 {
                    return bad("match needs sequences of at least 3 tokens".into());
                }
            }
        }
        Ok(())
    }
}

/// One labelled sequence. `segment` is the index of the separator for paired inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    #[serde(with = "space_separated")]
    pub tokens: Vec<u32>,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<usize>,
}

mod space_separated {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tokens: &[u32], s: S) -> Result<S::Ok, S::Error> {
        let text: Vec<String> = tokens.iter().map(u32::to_string).collect();
        s.serialize_str(&text.join(" "))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u32>, D::Error> {
        let text = String::deserialize(d)?;
        text.split_whitespace().map(|t| t.parse().map_err(D::Error::custom)).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Per-class example counts.
    pub fn label_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for e in &self.examples {
            counts[e.label] += 1;
        }
        counts
    }

    pub fn batches(&self, batch_size: usize) -> impl Iterator<Item = Batch> + '_ {
        batches(self, batch_size, PAD)
    }

    /// One JSON object per line: `{"tokens": "3 4 5", "label": 1}`.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for e in &self.examples {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut examples = Vec::new();
        for line in r.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                examples.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { examples })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// The three splits of a generated task.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub spec: TaskSpec,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn stream_id(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

/// Stream id reserved for task-level constants (the bytecls motif).
const TASK_STREAM: u64 = 3;

pub(crate) fn task_seed(spec: &TaskSpec) -> u64 {
    rng::derive_seed(spec.seed, &format!("task/{}", spec.name.name()))
}

pub fn generate(spec: &TaskSpec) -> Result<TaskData> {
    spec.validate()?;
    Ok(TaskData {
        spec: spec.clone(),
        train: generate_split(spec, Split::Train)?,
        val: generate_split(spec, Split::Val)?,
        test: generate_split(spec, Split::Test)?,
    })
}

pub fn generate_split(spec: &TaskSpec, split: Split) -> Result<Dataset> {
    spec.validate()?;
    let size = match split {
        Split::Train => spec.train_size,
        Split::Val => spec.val_size,
        Split::Test => spec.test_size,
    };
    let mut r = rng::stream(task_seed(spec), split.stream_id());
    match spec.name {
        TaskKind::Listops => listops::generate(spec, size, &mut r),
        TaskKind::Bytecls => {
            let motif = motif_for(spec);
            bytecls::generate(spec, &motif, size, &mut r)
        }
        TaskKind::Match => matching::generate(spec, size, &mut r),
    }
}

/// Exactly balanced class quotas; the first `size % classes` classes get one extra.
pub(crate) fn quotas(size: usize, classes: usize) -> Vec<usize> {
    (0..classes).map(|c| size / classes + usize::from(c < size % classes)).collect()
}

/// Labels in quota order, then shuffled.
pub(crate) fn balanced_labels(size: usize, classes: usize, r: &mut rng::Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut labels: Vec<usize> = quotas(size, classes).iter().enumerate().flat_map(|(c, &q)| std::iter::repeat_n(c, q)).collect();
    labels.shuffle(r);
    labels
}

/// Right-padded token matrix for a group of examples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    /// Row-major `rows × width`.
    pub tokens: Vec<u32>,
    pub lengths: Vec<usize>,
    pub labels: Vec<usize>,
    pub width: usize,
}

impl Batch {
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a Example>, pad_id: u32) -> Self {
        let examples: Vec<&Example> = examples.into_iter().collect();
        let width = examples.iter().map(|e| e.tokens.len()).max().unwrap_or(0);
        let mut tokens = Vec::with_capacity(examples.len() * width);
        for e in &examples {
            tokens.extend_from_slice(&e.tokens);
            tokens.extend(std::iter::repeat_n(pad_id, width - e.tokens.len()));
        }
        Self {
            tokens,
            lengths: examples.iter().map(|e| e.tokens.len()).collect(),
            labels: examples.iter().map(|e| e.label).collect(),
            width,
        }
    }

    pub fn rows(&self) -> usize {
        self.lengths.len()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.tokens[i * self.width..(i + 1) * self.width]
    }

    /// The same rows padded further to `width`.
    pub fn padded_to(&self, width: usize, pad_id: u32) -> Self {
        assert!(width >= self.width, "cannot shrink a batch");
        let mut tokens = Vec::with_capacity(self.rows() * width);
        for i in 0..self.rows() {
            tokens.extend_from_slice(self.row(i));
            tokens.extend(std::iter::repeat_n(pad_id, width - self.width));
        }
        Self { tokens, lengths: self.lengths.clone(), labels: self.labels.clone(), width }
    }
}

/// Consecutive batches in dataset order; the last may be short.
pub fn batches(data: &Dataset, batch_size: usize, pad_id: u32) -> impl Iterator<Item = Batch> + '_ {
    assert!(batch_size > 0, "batch_size must be positive");
    data.examples.chunks(batch_size).map(move |c| Batch::from_examples(c, pad_id))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(tokens: &[u32], label: usize) -> Example {
        Example { tokens: tokens.to_vec(), label, segment: None }
    }

    #[test]
    fn equal_lengths_get_no_padding() {
        let b = Batch::from_examples(&[ex(&[3, 4], 0), ex(&[5, 6], 1)], PAD);
        assert_eq!(b.width, 2);
        assert_eq!(b.tokens, vec![3, 4, 5, 6]);
    }

    #[test]
    fn short_rows_are_right_padded() {
        let b = Batch::from_examples(&[ex(&[3, 4, 5], 0), ex(&[6, 7, 8, 9, 10], 1)], PAD);
        assert_eq!(b.width, 5);
        assert_eq!(b.row(0), &[3, 4, 5, PAD, PAD]);
        assert_eq!(b.lengths, vec![3, 5]);
        assert_eq!(b.padded_to(7, PAD).row(1), &[6, 7, 8, 9, 10, PAD, PAD]);
    }

    #[test]
    fn quotas_are_balanced() {
        assert_eq!(quotas(10, 3), vec![4, 3, 3]);
        assert_eq!(quotas(6, 2), vec![3, 3]);
    }

    #[test]
    fn jsonl_round_trip() {
        let d = Dataset { examples: vec![ex(&[3, 4, 5], 1), Example { tokens: vec![7, 2, 8], label: 0, segment: Some(1) }] };
        let mut buf = Vec::new();
        d.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(r#"{"tokens":"3 4 5","label":1}"#));
        assert_eq!(Dataset::read_jsonl(&buf[..]).unwrap(), d);
    }

    #[test]
    fn spec_rejects_unknown_keys() {
        let ok: TaskSpec = serde_json::from_str(r#"{"name":"listops","listops":{"max_depth":2}}"#).unwrap();
        assert_eq!(ok.listops.max_depth, 2);
        assert!(serde_json::from_str::<TaskSpec>(r#"{"name":"listops","depth":2}"#).is_err());
        assert!(serde_json::from_str::<TaskSpec>(r#"{"name":"listops","listops":{"depth":2}}"#).is_err());
    }
}
