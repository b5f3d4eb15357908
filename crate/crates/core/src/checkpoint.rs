//! `WGCK` checkpoint container.
//!
//! Layout, all integers little-endian `u32`:
//! magic `WGCK`, header length, JSON header, tensor count, then per tensor
//! its name length, name bytes, rank and dims, then every tensor's data as
//! `f32` in table order. Tensor names carry a network prefix (`G.`, `D.`,
//! `F.`, `DX.`, `DY.`).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use windflow_tensor::{Float, Tensor};

use crate::error::{Error, Result};
use crate::nets::{build_generator, init_rng, Model, ModelSpec};
use crate::raster::{ChannelTag, DatasetManifest, Family};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WGCK";

/// Data constants needed to turn rasters into model inputs and back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub family: Family,
    pub geometry_channels: Vec<ChannelTag>,
    pub size: usize,
    pub extent_m: f32,
    pub v_max: f64,
    pub v_ref: f64,
    pub max_height: f64,
    pub n_bins: usize,
}

impl Normalization {
    pub fn from_manifest(m: &DatasetManifest) -> Self {
        Self {
            family: m.family,
            geometry_channels: m.geometry_channels().to_vec(),
            size: m.size,
            extent_m: m.extent_m,
            v_max: m.v_max,
            v_ref: m.v_ref,
            max_height: m.max_height,
            n_bins: m.n_bins,
        }
    }
}

/// Power-iteration state of one spectrally normalized layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnRecord {
    pub weight: String,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub spec: ModelSpec,
    pub spec_hash: String,
    /// Completed training epochs.
    pub epoch: usize,
    pub seed: u64,
    pub dataset: String,
    pub normalization: Normalization,
    pub sn: Vec<SnRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(spec: ModelSpec, normalization: Normalization, epoch: usize, seed: u64, dataset: &str) -> Self {
        Self {
            header: CheckpointHeader {
                spec_hash: spec.hash(),
                spec,
                epoch,
                seed,
                dataset: dataset.to_string(),
                normalization,
                sn: Vec::new(),
            },
            tensors: Vec::new(),
        }
    }

    /// Append every parameter and SN state of `model` under `prefix`.
    pub fn add_model<T: Float>(&mut self, prefix: &str, model: &Model<T>) {
        for (name, t) in model.params.iter() {
            self.tensors.push(NamedTensor {
                name: format!("{prefix}.{name}"),
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|x| x.as_f64() as f32).collect(),
            });
        }
        for s in &model.sn {
            self.header.sn.push(SnRecord {
                weight: format!("{prefix}.{}", s.weight),
                u: s.u.iter().map(|x| x.as_f64() as f32).collect(),
                v: s.v.iter().map(|x| x.as_f64() as f32).collect(),
            });
        }
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        let p = format!("{prefix}.");
        self.tensors.iter().any(|t| t.name.starts_with(&p))
    }

    /// Overwrite `model`'s weights with the tensors stored under `prefix`.
    /// Names and shapes must match one to one.
    pub fn load_into<T: Float>(&self, prefix: &str, model: &mut Model<T>) -> Result<()> {
        let p = format!("{prefix}.");
        let stored: Vec<&NamedTensor> = self.tensors.iter().filter(|t| t.name.starts_with(&p)).collect();
        if stored.len() != model.params.len() {
            return Err(Error::SpecMismatch(format!(
                "'{prefix}' holds {} tensors, model has {}",
                stored.len(),
                model.params.len()
            )));
        }
        for t in stored {
            let local = &t.name[p.len()..];
            let id = model
                .params
                .find(local)
                .ok_or_else(|| Error::SpecMismatch(format!("model has no parameter {local}")))?;
            if model.params.value(id).shape() != t.shape.as_slice() {
                return Err(Error::SpecMismatch(format!(
                    "{local}: stored {:?}, model {:?}",
                    t.shape,
                    model.params.value(id).shape()
                )));
            }
            *model.params.value_mut(id) = Tensor::from_vec(&t.shape, t.data.iter().map(|&x| T::lit(x as f64)).collect())?;
        }
        for state in &mut model.sn {
            let key = format!("{p}{}", state.weight);
            let rec = self
                .header
                .sn
                .iter()
                .find(|r| r.weight == key)
                .ok_or_else(|| Error::SpecMismatch(format!("missing SN state for {key}")))?;
            if rec.u.len() != state.u.len() || rec.v.len() != state.v.len() {
                return Err(Error::SpecMismatch(format!("SN state size for {key}")));
            }
            state.u = rec.u.iter().map(|&x| T::lit(x as f64)).collect();
            state.v = rec.v.iter().map(|&x| T::lit(x as f64)).collect();
        }
        Ok(())
    }

    /// Rebuild the primary generator `G` with its trained weights.
    pub fn generator<T: Float>(&self) -> Result<Model<T>> {
        let mut model = build_generator(&self.header.spec.generator, &mut init_rng(0, 0))?;
        self.load_into("G", &mut model)?;
        Ok(model)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(16 + header.len() + self.tensors.iter().map(|t| 4 * t.data.len() + 64).sum::<usize>());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, header.len())?;
        out.extend_from_slice(&header);
        put_u32(&mut out, self.tensors.len())?;
        for t in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Shape(format!("{}: shape {:?} vs {} values", t.name, t.shape, t.data.len())));
            }
            put_u32(&mut out, t.name.len())?;
            out.extend_from_slice(t.name.as_bytes());
            put_u32(&mut out, t.shape.len())?;
            for &d in &t.shape {
                put_u32(&mut out, d)?;
            }
        }
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let header_len = r.u32()?;
        let header: CheckpointHeader =
            serde_json::from_slice(r.take(header_len)?).map_err(|e| corrupt(&format!("header: {e}")))?;
        if header.spec.hash() != header.spec_hash {
            return Err(corrupt("spec hash does not match the embedded spec"));
        }
        let count = r.u32()?;
        let mut table = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u32()?;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| corrupt("tensor name is not UTF-8"))?;
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            table.push((name, shape));
        }
        let mut tensors = Vec::with_capacity(table.len());
        for (name, shape) in table {
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| corrupt("tensor size overflows"))?;
            let raw = r.take(len.checked_mul(4).ok_or_else(|| corrupt("tensor size overflows"))?)?;
            let data: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(corrupt(&format!("{name} holds non-finite values")));
            }
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self { header, tensors })
    }

    /// Hex SHA-256 of the encoded checkpoint.
    pub fn checksum(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.encode()?)))
    }
}

fn corrupt(msg: &str) -> Error {
    Error::CorruptCheckpoint(msg.to_string())
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Shape(format!("{v} does not fit the container")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, ckpt.encode()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::decode(&std::fs::read(path)?)
}

/// Load and require a specific model spec.
pub fn load_checkpoint_for(path: &Path, expected: &ModelSpec) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.header.spec_hash != expected.hash() {
        return Err(Error::SpecMismatch(format!(
            "checkpoint spec {} differs from requested {}",
            ckpt.header.spec_hash,
            expected.hash()
        )));
    }
    Ok(ckpt)
}
