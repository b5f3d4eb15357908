//! Error metrics, residual maps and the evaluation harness.
//!
//! Metrics are reported in normalized units, speed divided by the target
//! dataset's `v_max`, so values from different datasets are comparable.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Normalization};
use crate::error::{Error, Result};
use crate::nets::{model_input, prediction_to_speed, GeneratorSpec, Model};
use crate::raster::{ChannelTag, DatasetManifest, Family, FieldGrid, SamplePair};
use crate::render::viridis_png;

/// Pixels whose normalized target speed is below this are left out of MRE.
pub const MRE_GUARD: f64 = 0.05;

fn check(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::Shape(format!("{} targets vs {} predictions", y.len(), yhat.len())));
    }
    if y.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok((y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64).sqrt())
}

/// Mean of `|y - yhat| / y` over pixels with `y >= eps`.
pub fn mre(y: &[f64], yhat: &[f64], eps: f64) -> Result<f64> {
    check(y, yhat)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig(format!("relative-error guard {eps} must be positive")));
    }
    let (sum, n) = y
        .iter()
        .zip(yhat)
        .filter(|(a, _)| **a >= eps)
        .fold((0.0, 0usize), |(s, n), (a, b)| (s + (a - b).abs() / a, n + 1));
    if n == 0 {
        return Err(Error::AllPixelsExcluded);
    }
    Ok(sum / n as f64)
}

/// Per-pixel `|y - yhat|`; the mean is attached to the metadata.
pub fn residual_map(y: &FieldGrid, yhat: &FieldGrid) -> Result<FieldGrid> {
    if (y.height(), y.width(), y.channel_count()) != (yhat.height(), yhat.width(), yhat.channel_count()) {
        return Err(Error::Shape(format!(
            "residual of {}x{}x{} and {}x{}x{}",
            y.height(),
            y.width(),
            y.channel_count(),
            yhat.height(),
            yhat.width(),
            yhat.channel_count()
        )));
    }
    let data: Vec<f32> = y.data().iter().zip(yhat.data()).map(|(a, b)| (a - b).abs()).collect();
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / data.len() as f64;
    let mut out = FieldGrid::from_data(y.height(), y.width(), y.channels().to_vec(), data, y.extent_m)?;
    out.meta.mean = Some(mean);
    Ok(out)
}

/// Viridis PNG of a residual map scaled to `[0, hi]`.
pub fn residual_png(residual: &FieldGrid, hi: f64) -> Result<Vec<u8>> {
    viridis_png(&residual.plane(0), residual.height(), residual.width(), 0.0, hi.max(f64::MIN_POSITIVE))
}

/// Pooled metrics over a set of images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub mae: f64,
    pub rmse: f64,
    pub mre: f64,
    pub pixels: usize,
    pub mre_excluded_pixels: usize,
}

impl Scores {
    pub fn compute(y: &[f64], yhat: &[f64]) -> Result<Self> {
        Ok(Self {
            mae: mae(y, yhat)?,
            rmse: rmse(y, yhat)?,
            mre: mre(y, yhat, MRE_GUARD)?,
            pixels: y.len(),
            mre_excluded_pixels: y.iter().filter(|&&v| v < MRE_GUARD).count(),
        })
    }
}

fn normalized(grid: &FieldGrid, v_max: f64) -> Vec<f64> {
    grid.data().iter().map(|&v| v as f64 / v_max).collect()
}

/// Generator prediction in m/s for one geometry raster.
pub fn predict_speed(model: &Model<f32>, spec: &GeneratorSpec, norm: &Normalization, geometry: &FieldGrid) -> Result<FieldGrid> {
    spec.check_input(geometry.height(), geometry.width())?;
    let x = model_input(geometry, norm.max_height, spec.sdf_channel)?.to_tensor();
    let y = model.predict(&x)?;
    let pred = FieldGrid::from_tensor(&y, 0, vec![ChannelTag::Velocity], geometry.extent_m)?;
    Ok(prediction_to_speed(&pred, norm.v_max))
}

/// Scores of `model` on `samples`, normalized by `norm.v_max`.
pub fn score_model(model: &Model<f32>, spec: &GeneratorSpec, norm: &Normalization, samples: &[SamplePair]) -> Result<Scores> {
    let mut y = Vec::new();
    let mut yhat = Vec::new();
    for s in samples {
        let pred = predict_speed(model, spec, norm, &s.geometry)?;
        y.extend(normalized(&s.flow, norm.v_max));
        yhat.extend(normalized(&pred, norm.v_max));
    }
    Scores::compute(&y, &yhat)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    All,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            _ => Err(Error::UnknownName {
                kind: "split",
                name: s.to_string(),
            }),
        }
    }
}

pub fn split_indices_of(manifest: &DatasetManifest, split: Split) -> Vec<usize> {
    let (train, test) = manifest.split();
    match split {
        Split::Train => train,
        Split::Test => test,
        Split::All => (0..manifest.sample_count).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedScores {
    pub seed: u64,
    pub spec_hash: String,
    #[serde(flatten)]
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub sample_id: usize,
    pub mae: f64,
    pub rmse: f64,
    /// Absent when every pixel of the sample is below the guard.
    pub mre: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub trained_on: String,
    pub source_family: Family,
    pub target_family: Family,
    pub split: Split,
    pub units: String,
    pub mre_guard: f64,
    pub samples: usize,
    pub mae: f64,
    pub rmse: f64,
    pub mre: f64,
    pub mae_std: f64,
    pub rmse_std: f64,
    pub mre_std: f64,
    pub per_seed: Vec<SeedScores>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    /// Per-sample scores of the first checkpoint.
    pub per_sample: Vec<SampleScores>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

fn compatible(ckpt: &Checkpoint, manifest: &DatasetManifest) -> Result<()> {
    let want = &ckpt.header.normalization.geometry_channels;
    if want.as_slice() != manifest.geometry_channels() {
        return Err(Error::SpecMismatch(format!(
            "model trained on channels {want:?}, dataset provides {:?}",
            manifest.geometry_channels()
        )));
    }
    Ok(())
}

/// Score one or more checkpoints (typically seeds of one configuration) on
/// a split of a dataset. Predictions are converted to m/s with each model's
/// own constants and normalized by the dataset's `v_max`.
pub fn evaluate(checkpoints: &[Checkpoint], manifest: &DatasetManifest, samples: &[SamplePair], split: Split) -> Result<Evaluation> {
    let first = checkpoints.first().ok_or(Error::EmptyBatch)?;
    let indices = split_indices_of(manifest, split);
    if indices.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let v_max = manifest.v_max;
    let mut per_seed = Vec::new();
    let mut per_sample = Vec::new();
    for (k, ckpt) in checkpoints.iter().enumerate() {
        compatible(ckpt, manifest)?;
        let model = ckpt.generator::<f32>()?;
        let (mut y, mut yhat) = (Vec::new(), Vec::new());
        for &i in &indices {
            let s = &samples[i];
            let pred = predict_speed(&model, &ckpt.header.spec.generator, &ckpt.header.normalization, &s.geometry)?;
            let (ys, ps) = (normalized(&s.flow, v_max), normalized(&pred, v_max));
            if k == 0 {
                per_sample.push(SampleScores {
                    sample_id: manifest.samples.get(i).map_or(i, |e| e.id),
                    mae: mae(&ys, &ps)?,
                    rmse: rmse(&ys, &ps)?,
                    mre: mre(&ys, &ps, MRE_GUARD).ok(),
                });
            }
            y.extend(ys);
            yhat.extend(ps);
        }
        per_seed.push(SeedScores {
            seed: ckpt.header.seed,
            spec_hash: ckpt.header.spec_hash.clone(),
            scores: Scores::compute(&y, &yhat)?,
        });
    }
    let pick = |f: fn(&Scores) -> f64| mean_std(&per_seed.iter().map(|s| f(&s.scores)).collect::<Vec<_>>());
    let ((mae_m, mae_s), (rmse_m, rmse_s), (mre_m, mre_s)) = (pick(|s| s.mae), pick(|s| s.rmse), pick(|s| s.mre));
    Ok(Evaluation {
        report: MetricReport {
            dataset: manifest.name.clone(),
            trained_on: first.header.dataset.clone(),
            source_family: first.header.normalization.family,
            target_family: manifest.family,
            split,
            units: "fraction_of_v_max".into(),
            mre_guard: MRE_GUARD,
            samples: indices.len(),
            mae: mae_m,
            rmse: rmse_m,
            mre: mre_m,
            mae_std: mae_s,
            rmse_std: rmse_s,
            mre_std: mre_s,
            per_seed,
        },
        per_sample,
    })
}

/// Evaluate checkpoints trained on one dataset against every sample of
/// another. Provenance is recorded in `trained_on` / `source_family`.
pub fn cross_evaluate(checkpoints: &[Checkpoint], manifest: &DatasetManifest, samples: &[SamplePair]) -> Result<Evaluation> {
    evaluate(checkpoints, manifest, samples, Split::All)
}

pub const METRICS_FILE: &str = "metrics.json";
pub const PER_SAMPLE_FILE: &str = "per_sample.csv";

/// Write `metrics.json` and the per-sample CSV into `dir`.
pub fn write_evaluation(dir: &Path, eval: &Evaluation) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(METRICS_FILE), serde_json::to_vec_pretty(&eval.report)?)?;
    let mut w = csv::Writer::from_path(dir.join(PER_SAMPLE_FILE)).map_err(csv_err)?;
    for row in &eval.per_sample {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidConfig(format!("csv: {other:?}")),
    }
}
