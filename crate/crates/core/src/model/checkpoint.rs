//! Binary checkpoints.
//!
//! Layout: the 8 magic bytes `ATNSCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the JSON header, then every
//! parameter listed in the header as little-endian `f64` values in order.
//! Only the exact format version is accepted.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{BlockLayout, Transformer};
use super::spec::ModelConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ATNSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    seed: u64,
    layers: Vec<Vec<BlockLayout>>,
    params: Vec<ParamEntry>,
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

/// Writes the model's live parameters plus free-form metadata.
pub fn write_checkpoint(model: &Transformer, meta: serde_json::Value, mut w: impl Write) -> Result<()> {
    let ids = model.live_param_ids();
    let store = model.params();
    let header = Header {
        config: model.config().clone(),
        seed: model.seed(),
        layers: model.layout(),
        params: ids.iter().map(|&id| ParamEntry { name: store.name(id).to_string(), shape: store.get(id).shape().to_vec() }).collect(),
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for id in ids {
        for x in store.get(id).data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Rebuilds a model from a checkpoint, returning it with its metadata.
pub fn read_checkpoint(mut r: impl Read) -> Result<(Transformer, serde_json::Value)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("format version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut model = Transformer::from_layout(&header.config, &header.layers, header.seed)?;
    let mut seen = 0;
    for entry in &header.params {
        let id = model
            .params()
            .find(&entry.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", entry.name)))?;
        let t = model.params_mut().get_mut(id);
        if t.shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!("parameter {} has shape {:?}, expected {:?}", entry.name, entry.shape, t.shape())));
        }
        let mut buf = vec![0u8; 8 * t.numel()];
        r.read_exact(&mut buf)?;
        for (x, b) in t.data_mut().iter_mut().zip(buf.chunks_exact(8)) {
            *x = f64::from_le_bytes(b.try_into().expect("8-byte chunk"));
        }
        if !t.is_finite() {
            return Err(Error::Checkpoint(format!("parameter {} holds non-finite values", entry.name)));
        }
        seen += 1;
    }
    if seen != model.live_param_ids().len() {
        return Err(Error::Checkpoint("checkpoint does not cover every parameter".into()));
    }
    Ok((model, header.meta))
}

pub fn save_checkpoint(model: &Transformer, meta: serde_json::Value, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(model, meta, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Transformer, serde_json::Value)> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}
