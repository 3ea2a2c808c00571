//! Architecture search over efficient-attention Transformer supernetworks.
//!
//! A single-layer supernetwork holds one attention block per candidate
//! mechanism and averages their outputs. After training, each block is
//! scored by how much validation accuracy drops when it is masked out; the
//! scores drive homogeneous selection, iterative pruning into a mixed-head
//! layer, top-k one-shot mixing, and layer-by-layer pruning.
//!
//! Modules, bottom-up:
//! * [`numcore`]: tensors, reverse-mode differentiation, Adam, schedule.
//! * [`attention`]: the nine candidate mechanisms plus the dense reference.
//! * [`model`]: attention blocks, supernetwork layers, CLS classifier.
//! * [`tasks`]: seeded synthetic sequence-classification tasks.
//! * [`train`]: training loop and accuracy evaluation.
//! * [`search`]: masked-accuracy scoring and the search procedures.

pub mod attention;
pub mod error;
pub mod model;
pub mod numcore;
pub mod rng;
pub mod search;
pub mod tasks;
pub mod train;

pub use attention::{AttentionConfig, AttentionKind, AttentionParams, PatternMask, SynthMode};
pub use error::{Error, Result};
pub use model::{ArchitectureSpec, Classify, LayerEntry, ModelConfig, Transformer};
pub use numcore::{AdamState, LrSchedule, ParamId, ParamStore, Tape, Tensor, Var};
pub use search::{ScoreEntry, ScoreTable, SearchConfig};
pub use tasks::{Batch, Dataset, Example, TaskData, TaskSpec};
pub use train::TrainConfig;
