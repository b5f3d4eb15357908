use std::path::Path;

use serde_json::json;
use windflow_core::checkpoint::{load_checkpoint, Checkpoint};
use windflow_core::comfort::{comfort_map, predict_direction, sector_index, ComfortCriteria, WindRose, CLASS_NAMES, SECTORS};
use windflow_core::eval::{cross_evaluate, evaluate, write_evaluation, Evaluation, METRICS_FILE};
use windflow_core::floworacle::{generate, FamilySpec, SolverConfig};
use windflow_core::predict::Predictor;
use windflow_core::raster::{decode_wgf, encode_wgf, rasterize, read_dataset, write_dataset, ChannelTag, DatasetManifest, FieldGrid, SamplePair, Scene};
use windflow_core::render::viridis_png;
use windflow_core::train::{self, TrainData, FINAL_CHECKPOINT, TRAIN_LOG};
use windflow_serve::{ServiceConfig, CONFIG_ENV};

use crate::{claim_dir, compose, ComfortArgs, CrossEvalArgs, EvalArgs, GenDataArgs, GeometryArgs, PredictArgs, Report, ServeArgs, TrainArgs};
use crate::error::CliError;

pub const TRAIN_SUMMARY: &str = "train_summary.json";
pub const PREDICTION_JSON: &str = "prediction.json";
pub const FLOW_WGF: &str = "flow.wgf";
pub const FLOW_PNG: &str = "flow.png";
pub const COMFORT_PNG: &str = "comfort.png";
pub const COMFORT_JSON: &str = "comfort.json";

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::at(path)(e.into()))
}

fn load_predictor(path: &Path) -> Result<Predictor, CliError> {
    Predictor::load(path).map_err(|e| CliError::at(path)(e.into()))
}

fn read_data(dir: &Path) -> Result<(DatasetManifest, Vec<SamplePair>), CliError> {
    read_dataset(dir).map_err(|e| CliError::at(dir)(e.into()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

pub fn gen_data(a: &GenDataArgs, force: bool) -> Result<Report, CliError> {
    let spec = FamilySpec::new(a.family, a.count, a.seed);
    let mut solver = SolverConfig {
        n: a.size,
        ..SolverConfig::default()
    };
    if let Some(steps) = a.max_steps {
        solver.max_steps = steps;
    }
    spec.validate()?;
    solver.validate()?;
    claim_dir(&a.out, force)?;
    let data = generate(&spec, &solver)?;
    write_dataset(&data.manifest, &data.samples, &a.out, a.previews)?;
    let m = &data.manifest;
    let (train, test) = m.split();
    let json = json!({
        "out": a.out,
        "name": m.name,
        "family": m.family,
        "samples": m.sample_count,
        "size": m.size,
        "extent_m": m.extent_m,
        "v_max": m.v_max,
        "channels": m.channel_schema,
        "train": train.len(),
        "test": test.len(),
        "unconverged": data.unconverged,
    });
    let mut human = vec![
        format!("wrote {} ({} samples, {}x{}) to {}", m.name, m.sample_count, m.size, m.size, a.out.display()),
        format!("v_max {:.2} m/s, split {}/{} train/test", m.v_max, train.len(), test.len()),
    ];
    if data.unconverged > 0 {
        human.push(format!("{} solves stopped before converging", data.unconverged));
    }
    Ok(Report { json, human })
}

pub fn train(a: &TrainArgs, force: bool) -> Result<Report, CliError> {
    let (manifest, samples) = read_data(&a.data)?;
    let spec = compose(&a.flags(), manifest.geometry_channels().len(), manifest.size)?;
    let cfg = a.hyper.config(a.seed, Some(a.out.clone()));
    cfg.validate()?;
    claim_dir(&a.out, force)?;
    let data = TrainData::from_dataset(&manifest, &samples);
    let outcome = train::train(&data, &spec, &cfg)?;
    let header = &outcome.checkpoint.header;
    let final_l1 = outcome.epochs.last().map(|e| e.train_l1);
    let json = json!({
        "out": a.out,
        "checkpoint": a.out.join(FINAL_CHECKPOINT),
        "log": a.out.join(TRAIN_LOG),
        "arch": spec.arch,
        "spec_hash": header.spec_hash,
        "dataset": manifest.name,
        "seed": a.seed,
        "config": cfg,
        "spec": spec,
        "steps": outcome.steps.len(),
        "updates": outcome.updates,
        "final_train_l1": final_l1,
        "epochs": outcome.epochs,
    });
    write_json(&a.out.join(TRAIN_SUMMARY), &json)?;
    let human = vec![
        format!(
            "trained {} on {} for {} epochs ({} steps), final train L1 {:.4}",
            spec.arch,
            manifest.name,
            outcome.epochs.len(),
            outcome.steps.len(),
            final_l1.unwrap_or(f64::NAN)
        ),
        format!("checkpoint {}", a.out.join(FINAL_CHECKPOINT).display()),
    ];
    Ok(Report { json, human })
}

fn load_all(paths: &[std::path::PathBuf]) -> Result<Vec<Checkpoint>, CliError> {
    paths.iter().map(|p| load_checkpoint(p).map_err(|e| CliError::at(p)(e.into()))).collect()
}

fn claim_metrics(out: Option<&Path>, force: bool) -> Result<(), CliError> {
    if let Some(dir) = out {
        if dir.join(METRICS_FILE).exists() && !force {
            return Err(CliError::user(format!("{} already holds {METRICS_FILE}; pass --force to overwrite", dir.display())));
        }
    }
    Ok(())
}

fn evaluation_report(eval: &Evaluation, out: Option<&Path>) -> Result<Report, CliError> {
    if let Some(dir) = out {
        write_evaluation(dir, eval)?;
    }
    let r = &eval.report;
    let json = serde_json::to_value(r)?;
    let human = vec![
        format!(
            "{} ({}) -> {} ({}), {} split, {} samples, {} checkpoint(s)",
            r.trained_on,
            r.source_family,
            r.dataset,
            r.target_family,
            serde_json::to_value(r.split)?.as_str().unwrap_or_default(),
            r.samples,
            r.per_seed.len()
        ),
        format!("mae  {:.5} ± {:.5}", r.mae, r.mae_std),
        format!("rmse {:.5} ± {:.5}", r.rmse, r.rmse_std),
        format!("mre  {:.5} ± {:.5}", r.mre, r.mre_std),
    ];
    Ok(Report { json, human })
}

pub fn eval(a: &EvalArgs, force: bool) -> Result<Report, CliError> {
    claim_metrics(a.out.as_deref(), force)?;
    let ckpts = load_all(&a.checkpoint)?;
    let (manifest, samples) = read_data(&a.data)?;
    let eval = evaluate(&ckpts, &manifest, &samples, a.split)?;
    evaluation_report(&eval, a.out.as_deref())
}

pub fn cross_eval(a: &CrossEvalArgs, force: bool) -> Result<Report, CliError> {
    claim_metrics(a.out.as_deref(), force)?;
    let ckpts = load_all(&a.checkpoint)?;
    let (manifest, samples) = read_data(&a.data)?;
    let eval = cross_evaluate(&ckpts, &manifest, &samples)?;
    evaluation_report(&eval, a.out.as_deref())
}

/// The raw geometry raster for a predictor, from a scene or a WGF file.
fn load_geometry(input: &GeometryArgs, p: &Predictor) -> Result<FieldGrid, CliError> {
    let norm = &p.normalization;
    match (&input.scene, &input.geometry) {
        (Some(path), None) => {
            let scene: Scene = serde_json::from_slice(&read(path)?).map_err(|e| CliError::at(path)(e.into()))?;
            let with_height = norm.geometry_channels.contains(&ChannelTag::Height);
            Ok(rasterize(&scene, norm.size, with_height)?)
        }
        (None, Some(path)) => {
            let rec = decode_wgf(&read(path)?).map_err(|e| CliError::at(path)(e.into()))?;
            if rec.geometry_channels != norm.geometry_channels.len() {
                return Err(CliError::user(format!(
                    "{} has {} geometry channels, the model expects {:?}",
                    path.display(),
                    rec.geometry_channels,
                    norm.geometry_channels
                )));
            }
            Ok(FieldGrid::from_data(rec.height, rec.width, norm.geometry_channels.clone(), rec.geometry, norm.extent_m)?)
        }
        _ => Err(CliError::user("give exactly one of --scene or --geometry")),
    }
}

fn parse_sector(s: &str) -> Result<usize, CliError> {
    match s.parse::<usize>() {
        Ok(i) if i < SECTORS.len() => Ok(i),
        Ok(i) => Err(CliError::user(format!("sector {i} outside 0..8"))),
        Err(_) => Ok(sector_index(s)?),
    }
}

pub fn predict(a: &PredictArgs, force: bool) -> Result<Report, CliError> {
    let sector = parse_sector(&a.sector)?;
    let p = load_predictor(&a.checkpoint)?;
    let geometry = load_geometry(&a.input, &p)?;
    claim_dir(&a.out, force)?;
    let flow = predict_direction(&p, &geometry, sector)?;
    let v_max = p.normalization.v_max;
    std::fs::write(a.out.join(FLOW_WGF), encode_wgf(Some(&geometry), Some(&flow))?)?;
    std::fs::write(a.out.join(FLOW_PNG), viridis_png(flow.data(), flow.height(), flow.width(), 0.0, v_max)?)?;
    let speeds = flow.data();
    let max = speeds.iter().copied().fold(0.0f32, f32::max);
    let mean = speeds.iter().map(|&v| v as f64).sum::<f64>() / speeds.len() as f64;
    let json = json!({
        "checkpoint": a.checkpoint,
        "spec_hash": p.spec_hash,
        "direction_sector": sector,
        "sector": SECTORS[sector],
        "height": flow.height(),
        "width": flow.width(),
        "units": "m/s",
        "v_max": v_max,
        "mean_speed": mean,
        "max_speed": max,
        "flow": a.out.join(FLOW_WGF),
        "png": a.out.join(FLOW_PNG),
    });
    write_json(&a.out.join(PREDICTION_JSON), &json)?;
    let human = vec![
        format!("wind from {}: mean {mean:.2} m/s, max {max:.2} m/s", SECTORS[sector]),
        format!("wrote {} and {}", a.out.join(FLOW_WGF).display(), a.out.join(FLOW_PNG).display()),
    ];
    Ok(Report { json, human })
}

pub fn comfort(a: &ComfortArgs, force: bool) -> Result<Report, CliError> {
    let rose = WindRose::from_json(&read(&a.windrose)?).map_err(|e| CliError::at(&a.windrose)(e.into()))?;
    let criteria = match &a.criteria {
        Some(path) => serde_json::from_slice::<ComfortCriteria>(&read(path)?).map_err(|e| CliError::at(path)(e.into()))?,
        None => ComfortCriteria::default(),
    };
    criteria.validate()?;
    let p = load_predictor(&a.checkpoint)?;
    let geometry = load_geometry(&a.input, &p)?;
    claim_dir(&a.out, force)?;
    let map = comfort_map(&p, &geometry, &rose, &criteria)?;
    std::fs::write(a.out.join(COMFORT_PNG), map.to_png()?)?;
    let sidecar = map.sidecar();
    write_json(&a.out.join(COMFORT_JSON), &sidecar)?;
    let mut human: Vec<String> = CLASS_NAMES
        .iter()
        .zip(&sidecar.histogram)
        .map(|(name, n)| format!("{name:<17} {n}"))
        .collect();
    human.push(format!("{:<17} {}", "no data", sidecar.no_data));
    human.push(format!("wrote {} and {}", a.out.join(COMFORT_PNG).display(), a.out.join(COMFORT_JSON).display()));
    let mut json = serde_json::to_value(&sidecar)?;
    json["png"] = json!(a.out.join(COMFORT_PNG));
    json["json"] = json!(a.out.join(COMFORT_JSON));
    Ok(Report { json, human })
}

pub fn serve(a: &ServeArgs) -> Result<Report, CliError> {
    let mut cfg = match &a.config {
        Some(path) => ServiceConfig::from_file(path)?,
        None if std::env::var_os(CONFIG_ENV).is_some() => ServiceConfig::from_env()?,
        None => ServiceConfig::default(),
    };
    cfg.models.extend(a.models.iter().cloned());
    if let Some(bind) = &a.bind {
        cfg.bind = bind.clone();
    }
    if let Some(m) = a.max_size {
        cfg.max_size = m;
    }
    if let Some(t) = a.timeout_s {
        cfg.timeout_s = t;
    }
    cfg.validate()?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
    let addr = rt.block_on(windflow_serve::run(&cfg))?;
    Ok(Report {
        json: json!({"stopped": addr.to_string(), "models": cfg.models.keys().collect::<Vec<_>>()}),
        human: vec![format!("stopped serving on {addr}")],
    })
}
