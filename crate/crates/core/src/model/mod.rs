//! Attention blocks, averaged supernetwork layers and the CLS classifier.
//!
//! A layer's attention output is `mean(block(x) for block in used)`, with no
//! learned mixing weights. Layers are pre-norm:
//!
//! ```text
//! h = x + dropout(attention(norm1(x)))
//! y = h + dropout(ffn(norm2(h)))
//! ```
//!
//! and the classifier reads the final-normalized CLS position.

mod block;
mod checkpoint;
mod network;
mod spec;

pub use block::{AttentionBlock, SeqLayout};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use network::{BlockLayout, Classify, Forward, SupernetLayer, Transformer};
pub use spec::{ArchitectureSpec, LayerEntry, ModelConfig};
