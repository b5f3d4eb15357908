//! The `windflow` command line: dataset generation, training, evaluation,
//! ablation grids, flow and comfort predictions, and the HTTP service.

pub mod ablate;
mod commands;
pub mod compose;
pub mod error;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;
use windflow_core::eval::Split;
use windflow_core::nets::Attention;
use windflow_core::raster::Family;
use windflow_core::train::TrainConfig;

pub use ablate::AblationTable;
pub use compose::{compose, default_depth, Arch, AttPlace, SpecFlags};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "windflow", version, about = "Pedestrian wind surrogate models: data, training, evaluation and comfort maps")]
pub struct Cli {
    /// Print one JSON document to stdout instead of human-readable lines.
    #[arg(long, global = true)]
    pub json: bool,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset of geometry/flow pairs with the flow oracle.
    GenData(GenDataArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Score checkpoints on a dataset split.
    Eval(EvalArgs),
    /// Score checkpoints on every sample of another dataset.
    CrossEval(CrossEvalArgs),
    /// Train and score a whole ablation table over several seeds.
    Ablate(AblateArgs),
    /// Predict the speed field for one wind direction.
    Predict(PredictArgs),
    /// Build a pedestrian comfort map from a wind rose.
    Comfort(ComfortArgs),
    /// Serve checkpoints over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub family: Family,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Raster and lattice side in pixels.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Solver step cap per sample.
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Also write a PNG preview of each flow field.
    #[arg(long)]
    pub previews: bool,
}

/// Optimizer and schedule settings shared by `train` and `ablate`.
#[derive(Debug, Clone, Args)]
pub struct TrainHyper {
    #[arg(long, default_value_t = 70)]
    pub epochs: usize,
    /// Epochs of linear decay at the end; defaults to 2/7 of the epochs.
    #[arg(long)]
    pub decay_epochs: Option<usize>,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    /// First-layer filter count of generator and discriminator.
    #[arg(long)]
    pub base_filters: Option<usize>,
    /// U-Net depth; defaults to the deepest the raster allows, at most 8.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Stop after this many generator updates.
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Validate (and snapshot) every N epochs.
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 50)]
    pub pool_size: usize,
}

impl TrainHyper {
    pub fn config(&self, seed: u64, dir: Option<PathBuf>) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            decay_epochs: self.decay_epochs.unwrap_or(self.epochs * 2 / 7),
            pool_size: self.pool_size,
            seed,
            eval_every: self.eval_every,
            checkpoint_dir: dir,
            max_steps: self.max_steps,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub arch: Arch,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Spectral normalization in the discriminator.
    #[arg(long)]
    pub sn: bool,
    /// Add a signed distance channel to the input.
    #[arg(long)]
    pub sdf: bool,
    /// Add coordinate channels before the first convolution.
    #[arg(long)]
    pub coordconv: bool,
    #[arg(long, default_value = "none")]
    pub attention: Attention,
    #[arg(long, value_enum, default_value = "G")]
    pub att_place: AttPlace,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub hyper: TrainHyper,
}

impl TrainArgs {
    pub fn flags(&self) -> SpecFlags {
        SpecFlags {
            arch: self.arch,
            sn: self.sn,
            sdf: self.sdf,
            coordconv: self.coordconv,
            attention: self.attention,
            att_place: self.att_place,
            base_filters: self.hyper.base_filters,
            depth: self.hyper.depth,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file; repeat to average over seeds.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Directory for metrics.json and per_sample.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CrossEvalArgs {
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    /// Target dataset; every sample is scored.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub table: AblationTable,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub seeds: usize,
    /// First seed; runs use consecutive seeds from here.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Concurrent training runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub hyper: TrainHyper,
}

/// Geometry given as a scene JSON file or a WGF raster.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct GeometryArgs {
    /// Scene JSON: extent and building polygons with heights.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// WGF raster whose geometry channels match the model.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub input: GeometryArgs,
    /// Wind-from sector, as a compass name or index 0..7 from N clockwise.
    #[arg(long, default_value = "W")]
    pub sector: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ComfortArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub input: GeometryArgs,
    /// Wind rose JSON.
    #[arg(long)]
    pub windrose: PathBuf,
    /// Comfort criteria JSON; defaults to the Lawson ladder at 5%.
    #[arg(long)]
    pub criteria: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Service config JSON; falls back to $WINDCOMFORT_CONFIG.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
    /// Extra model as name=path; repeatable.
    #[arg(long = "model", value_parser = parse_model)]
    pub models: Vec<(String, PathBuf)>,
    #[arg(long)]
    pub max_size: Option<usize>,
    #[arg(long)]
    pub timeout_s: Option<u64>,
}

fn parse_model(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected name=path, got '{s}'")),
    }
}

/// What a command produced: a JSON document and its human rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub json: Value,
    pub human: Vec<String>,
}

/// Refuse to write into a non-empty directory unless forced.
pub fn claim_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.is_file() {
        return Err(CliError::user(format!("{} is a file, expected a directory", dir.display())));
    }
    let occupied = dir.is_dir() && std::fs::read_dir(dir)?.next().is_some();
    if occupied && !force {
        return Err(CliError::user(format!("{} is not empty; pass --force to overwrite", dir.display())));
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<Report, CliError> {
    match &cli.command {
        Command::GenData(a) => commands::gen_data(a, cli.force),
        Command::Train(a) => commands::train(a, cli.force),
        Command::Eval(a) => commands::eval(a, cli.force),
        Command::CrossEval(a) => commands::cross_eval(a, cli.force),
        Command::Ablate(a) => ablate::run(a, cli.force),
        Command::Predict(a) => commands::predict(a, cli.force),
        Command::Comfort(a) => commands::comfort(a, cli.force),
        Command::Serve(a) => commands::serve(a),
    }
}
