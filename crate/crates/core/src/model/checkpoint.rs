//! Versioned binary checkpoint container.
//!
//! ```text
//! offset  field
//! 0       magic         8 bytes  "COBRACK1"
//! 8       version       u32 LE   (currently 1)
//! 12      dtype         u8       1 = f32, 2 = f64
//! 13      header_len    u32 LE
//! 17      header        header_len bytes of UTF-8 JSON (CheckpointHeader)
//! ..      tensor_count  u32 LE
//! ..      tensors, each:
//!           name_len u32 LE, name (UTF-8), frozen u8 (0/1),
//!           ndim u32 LE, dims ndim × u32 LE,
//!           values  product(dims) × dtype width, little-endian
//! ```
//!
//! The JSON header carries the model config, the structural event history
//! (step additions and subject registrations, in order), the routing table,
//! the init RNG position, and free-form string metadata. Tensors appear in
//! parameter-store order; loading replays the history and then checks every
//! name and shape before copying values in.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CobraError, Result};
use crate::numerics::{DType, RngState, Scalar};

use super::cobra::{CobraModel, ModelEvent};
use super::config::ModelConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"COBRACK1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub crate_version: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub history: Vec<ModelEvent>,
    pub routing: Vec<(u32, usize)>,
    pub rng: RngState,
    pub meta: BTreeMap<String, String>,
}

pub fn encode<S: Scalar>(
    model: &CobraModel<S>,
    meta: &BTreeMap<String, String>,
) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        crate_version: crate::VERSION.to_string(),
        config: model.config().clone(),
        seed: model.seed(),
        history: model.history().to_vec(),
        routing: model.routing().iter().map(|(&s, &t)| (s, t)).collect(),
        rng: model.rng_state(),
        meta: meta.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(S::DTYPE as u8);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    let entries = model.store().entries();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(u8::from(e.frozen));
        let shape = e.tensor.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in e.tensor.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CobraError::Format(format!(
                "truncated checkpoint: need {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode<S: Scalar>(bytes: &[u8]) -> Result<(CobraModel<S>, CheckpointHeader)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(CobraError::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CobraError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let dtype =
        DType::from_tag(r.u8()?).ok_or_else(|| CobraError::Format("unknown dtype tag".into()))?;
    let header_len = r.u32()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?)?;
    let mut model = CobraModel::<S>::replay(header.config.clone(), header.seed, &header.history)?;
    let routing: BTreeMap<u32, usize> = header.routing.iter().copied().collect();
    if &routing != model.routing() {
        return Err(CobraError::Format(
            "routing table disagrees with history".into(),
        ));
    }
    let count = r.u32()? as usize;
    if count != model.store().len() {
        return Err(CobraError::Format(format!(
            "checkpoint holds {count} tensors, layout expects {}",
            model.store().len()
        )));
    }
    for entry in model.store_mut().entries_mut() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CobraError::Format("tensor name is not UTF-8".into()))?;
        if name != entry.name {
            return Err(CobraError::Format(format!(
                "expected tensor {}, found {name}",
                entry.name
            )));
        }
        entry.frozen = r.u8()? != 0;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        if shape != entry.tensor.shape() {
            return Err(CobraError::Format(format!(
                "tensor {name} has shape {shape:?}, expected {:?}",
                entry.tensor.shape()
            )));
        }
        let w = dtype.width();
        let raw = r.take(entry.tensor.numel() * w)?;
        for (dst, chunk) in entry.tensor.data_mut().iter_mut().zip(raw.chunks_exact(w)) {
            *dst = match dtype {
                DType::F32 => S::narrow(f32::read_le(chunk) as f64),
                DType::F64 => S::narrow(f64::read_le(chunk)),
            };
        }
    }
    if r.pos != bytes.len() {
        return Err(CobraError::Format(
            "trailing bytes after last tensor".into(),
        ));
    }
    model.set_rng_state(header.rng);
    Ok((model, header))
}

pub fn save<S: Scalar>(
    model: &CobraModel<S>,
    meta: &BTreeMap<String, String>,
    path: &Path,
) -> Result<()> {
    let bytes = encode(model, meta)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load<S: Scalar>(path: &Path) -> Result<(CobraModel<S>, CheckpointHeader)> {
    let bytes = std::fs::read(path)?;
    decode(&bytes)
}
