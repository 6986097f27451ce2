//! Binary dataset container.
//!
//! ```text
//! magic        8 bytes  "COBRADS1"
//! version      u32 LE   (currently 1)
//! header_len   u32 LE
//! header       UTF-8 JSON: dataset meta and, per subject, id, voxel count,
//!              noise scale and projection cells
//! per subject  mixing  voxel_count × signature_dim f32 LE
//!              offset  voxel_count f32 LE
//! sample_count u32 LE
//! per sample   subject u32, stimulus u32, split u8 (0 train, 1 test),
//!              labels n_classes × u8, grid H·W·C × f32,
//!              target clip_len·clip_dim × f32
//! ```
//!
//! All floats are stored bit-exactly, so `load(save(d)) == d`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CobraError, Result};

use super::generate::{Dataset, DatasetMeta, Sample, Split, SubjectProfile};
use super::projection::ProjectionMap;

pub const DATASET_MAGIC: &[u8; 8] = b"COBRADS1";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SubjectHeader {
    subject_id: u32,
    voxel_count: usize,
    noise_scale: f32,
    projection: ProjectionMap,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: DatasetMeta,
    subjects: Vec<SubjectHeader>,
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(data: &Dataset) -> Result<Vec<u8>> {
    let header = Header {
        meta: data.meta.clone(),
        subjects: data
            .subjects
            .iter()
            .map(|p| SubjectHeader {
                subject_id: p.subject_id,
                voxel_count: p.voxel_count,
                noise_scale: p.noise_scale,
                projection: p.projection.clone(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for p in &data.subjects {
        put_f32s(&mut out, &p.mixing);
        put_f32s(&mut out, &p.offset);
    }
    out.extend_from_slice(&(data.samples.len() as u32).to_le_bytes());
    for s in &data.samples {
        out.extend_from_slice(&s.subject.to_le_bytes());
        out.extend_from_slice(&s.stimulus.to_le_bytes());
        out.push(match s.split {
            Split::Train => 0,
            Split::Test => 1,
        });
        out.extend_from_slice(&s.labels);
        put_f32s(&mut out, &s.grid);
        put_f32s(&mut out, &s.target);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end =
            end.ok_or_else(|| CobraError::Format(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| CobraError::Format("length overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != DATASET_MAGIC {
        return Err(CobraError::Format("not a dataset file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(CobraError::Format(format!(
            "unsupported dataset version {version}"
        )));
    }
    let len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(len)?)?;
    let meta = header.meta;
    let mut subjects = Vec::with_capacity(header.subjects.len());
    for h in header.subjects {
        h.projection.validate()?;
        if h.projection.voxel_count() != h.voxel_count {
            return Err(CobraError::Format(format!(
                "subject {} projection has {} cells for {} voxels",
                h.subject_id,
                h.projection.voxel_count(),
                h.voxel_count
            )));
        }
        let mixing = r.f32s(h.voxel_count * meta.signature_dim)?;
        let offset = r.f32s(h.voxel_count)?;
        subjects.push(SubjectProfile {
            subject_id: h.subject_id,
            voxel_count: h.voxel_count,
            projection: h.projection,
            mixing,
            offset,
            noise_scale: h.noise_scale,
        });
    }
    let n = r.u32()? as usize;
    let grid_len = meta.height * meta.width * meta.channels;
    let target_len = meta.clip_len * meta.clip_dim;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let subject = r.u32()?;
        let stimulus = r.u32()?;
        let split = match r.u8()? {
            0 => Split::Train,
            1 => Split::Test,
            other => return Err(CobraError::Format(format!("bad split tag {other}"))),
        };
        let labels = r.take(meta.n_classes)?.to_vec();
        if labels.iter().any(|&y| y > 1) {
            return Err(CobraError::Format("labels must be 0 or 1".into()));
        }
        let grid = r.f32s(grid_len)?;
        let target = r.f32s(target_len)?;
        samples.push(Sample {
            subject,
            stimulus,
            split,
            grid,
            labels,
            target,
        });
    }
    if r.pos != bytes.len() {
        return Err(CobraError::Format(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(Dataset {
        meta,
        subjects,
        samples,
    })
}

pub fn save(data: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode(data)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Dataset> {
    decode(&std::fs::read(path)?)
}
