//! Dataset directory: `manifest.json` plus one `NNNNNN.wgf` per sample.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::{ChannelTag, FieldGrid};
use crate::error::{Error, Result};
use crate::render;

pub const WGF_MAGIC: &[u8; 4] = b"WGF1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Wall,
    Single,
    Two,
    TwoHeight,
    Urban,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Wall, Family::Single, Family::Two, Family::TwoHeight, Family::Urban];

    pub fn name(self) -> &'static str {
        match self {
            Family::Wall => "wall",
            Family::Single => "single",
            Family::Two => "two",
            Family::TwoHeight => "two_height",
            Family::Urban => "urban",
        }
    }

    pub fn has_height(self) -> bool {
        matches!(self, Family::TwoHeight | Family::Urban)
    }

    /// Raw geometry channels stored on disk for this family.
    pub fn geometry_channels(self) -> Vec<ChannelTag> {
        if self.has_height() {
            vec![ChannelTag::Mask, ChannelTag::Height]
        } else {
            vec![ChannelTag::Mask]
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownName {
                kind: "family",
                name: s.to_string(),
            })
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub family: Family,
    pub sample_count: usize,
    /// Geometry channels followed by the single flow channel.
    pub channel_schema: Vec<ChannelTag>,
    pub size: usize,
    pub extent_m: f32,
    /// Upper end of the velocity range, m/s.
    pub v_max: f64,
    /// Physical inlet speed the solver was scaled to, m/s.
    pub v_ref: f64,
    /// Largest building height in the dataset, used to scale the height channel.
    pub max_height: f64,
    pub n_bins: usize,
    pub split_seed: u64,
    pub train_fraction: f64,
    pub samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn geometry_channels(&self) -> &[ChannelTag] {
        &self.channel_schema[..self.channel_schema.len().saturating_sub(1)]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::CorruptContainer(m));
        if self.n_bins < 2 {
            return bad(format!("n_bins {} < 2", self.n_bins));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} outside (0, 1)", self.train_fraction));
        }
        if self.samples.len() != self.sample_count {
            return bad(format!(
                "sample_count {} but {} entries",
                self.sample_count,
                self.samples.len()
            ));
        }
        if self.channel_schema.last() != Some(&ChannelTag::Velocity) || self.channel_schema.len() < 2 {
            return bad("channel_schema must list geometry channels then velocity".into());
        }
        if !(self.v_max > 0.0) {
            return bad(format!("v_max {} must be positive", self.v_max));
        }
        Ok(())
    }

    /// Deterministic (train, test) sample indices.
    pub fn split(&self) -> (Vec<usize>, Vec<usize>) {
        split_indices(self.sample_count, self.split_seed, self.train_fraction)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub geometry: FieldGrid,
    pub flow: FieldGrid,
}

/// Shuffle `0..count` with `seed` and cut it at `round(count * train_fraction)`,
/// keeping at least one sample on each side when `count >= 2`. Both halves are
/// returned sorted.
pub fn split_indices(count: usize, seed: u64, train_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = (0..count).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_train = (count as f64 * train_fraction).round() as usize;
    if count >= 2 {
        n_train = n_train.clamp(1, count - 1);
    } else {
        n_train = count;
    }
    let mut train = ids[..n_train].to_vec();
    let mut test = ids[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Encode a sample as WGF1. Either side may be empty (zero channels).
pub fn encode_wgf(geometry: Option<&FieldGrid>, flow: Option<&FieldGrid>) -> Result<Vec<u8>> {
    let any = geometry.or(flow).ok_or_else(|| Error::InvalidGrid("nothing to encode".into()))?;
    let (h, w) = (any.height(), any.width());
    if let (Some(g), Some(f)) = (geometry, flow) {
        if g.height() != f.height() || g.width() != f.width() {
            return Err(Error::InvalidGrid("geometry and flow differ in size".into()));
        }
    }
    let cg = geometry.map_or(0, |g| g.channel_count());
    let cf = flow.map_or(0, |f| f.channel_count());
    let mut out = Vec::with_capacity(20 + 4 * h * w * (cg + cf));
    out.extend_from_slice(WGF_MAGIC);
    for v in [h, w, cg, cf] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for g in [geometry, flow].into_iter().flatten() {
        for v in g.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Raw WGF1 contents: dimensions and the two HWC payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct WgfRecord {
    pub height: usize,
    pub width: usize,
    pub geometry_channels: usize,
    pub flow_channels: usize,
    pub geometry: Vec<f32>,
    pub flow: Vec<f32>,
}

pub fn decode_wgf(bytes: &[u8]) -> Result<WgfRecord> {
    let corrupt = |m: &str| Error::CorruptContainer(m.to_string());
    if bytes.len() < 20 {
        return Err(corrupt("truncated header"));
    }
    if &bytes[..4] != WGF_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, cg, cf) = (word(0), word(1), word(2), word(3));
    let n = h
        .checked_mul(w)
        .and_then(|hw| hw.checked_mul(cg + cf))
        .ok_or_else(|| corrupt("dimensions overflow"))?;
    if bytes.len() != 20 + 4 * n {
        return Err(Error::CorruptContainer(format!(
            "expected {} payload bytes, found {}",
            4 * n,
            bytes.len() - 20
        )));
    }
    let floats: Vec<f32> = bytes[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let split = h * w * cg;
    Ok(WgfRecord {
        height: h,
        width: w,
        geometry_channels: cg,
        flow_channels: cf,
        geometry: floats[..split].to_vec(),
        flow: floats[split..].to_vec(),
    })
}

pub fn write_wgf(path: &Path, pair: &SamplePair) -> Result<()> {
    fs::write(path, encode_wgf(Some(&pair.geometry), Some(&pair.flow))?)?;
    Ok(())
}

/// Read one sample, labelling its channels with the given schema.
pub fn read_wgf(path: &Path, geometry_tags: &[ChannelTag], extent_m: f32) -> Result<SamplePair> {
    let rec = decode_wgf(&fs::read(path)?)?;
    if rec.geometry_channels != geometry_tags.len() || rec.flow_channels != 1 {
        return Err(Error::CorruptContainer(format!(
            "{}: {} geometry / {} flow channels, expected {} / 1",
            path.display(),
            rec.geometry_channels,
            rec.flow_channels,
            geometry_tags.len()
        )));
    }
    Ok(SamplePair {
        geometry: FieldGrid::from_data(rec.height, rec.width, geometry_tags.to_vec(), rec.geometry, extent_m)?,
        flow: FieldGrid::from_data(rec.height, rec.width, vec![ChannelTag::Velocity], rec.flow, extent_m)?,
    })
}

pub fn sample_file_name(id: usize) -> String {
    format!("{id:06}.wgf")
}

/// Write `manifest.json` and every sample; `previews` adds a viridis PNG of
/// each flow field next to its sample file.
pub fn write_dataset(manifest: &DatasetManifest, samples: &[SamplePair], dir: &Path, previews: bool) -> Result<()> {
    manifest.validate()?;
    if samples.len() != manifest.sample_count {
        return Err(Error::CorruptContainer(format!(
            "manifest lists {} samples, {} given",
            manifest.sample_count,
            samples.len()
        )));
    }
    fs::create_dir_all(dir)?;
    for (entry, pair) in manifest.samples.iter().zip(samples) {
        write_wgf(&dir.join(&entry.file), pair)?;
        if previews {
            let png = render::viridis_png(&pair.flow.plane(0), pair.flow.height(), pair.flow.width(), 0.0, manifest.v_max)?;
            let stem = entry.file.trim_end_matches(".wgf");
            fs::write(dir.join(format!("{stem}.png")), png)?;
        }
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::CorruptContainer(format!("{}: {e}", path.display())))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::CorruptContainer(format!("{}: {e}", path.display())))?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<SamplePair>)> {
    let manifest = read_manifest(dir)?;
    let tags = manifest.geometry_channels().to_vec();
    let mut samples = Vec::with_capacity(manifest.sample_count);
    for entry in &manifest.samples {
        let pair = read_wgf(&dir.join(&entry.file), &tags, manifest.extent_m).map_err(|e| match e {
            Error::Io(io) => Error::CorruptContainer(format!("{}: {io}", entry.file)),
            other => other,
        })?;
        if pair.geometry.height() != manifest.size || pair.geometry.width() != manifest.size {
            return Err(Error::CorruptContainer(format!(
                "{} is {}x{}, manifest says {}",
                entry.file,
                pair.geometry.height(),
                pair.geometry.width(),
                manifest.size
            )));
        }
        samples.push(pair);
    }
    Ok((manifest, samples))
}
