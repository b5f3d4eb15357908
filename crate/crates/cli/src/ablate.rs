//! Ablation grids: every cell of a results table trained over several seeds
//! and scored on the test split.

use std::path::PathBuf;

use clap::ValueEnum;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use windflow_core::checkpoint::load_checkpoint;
use windflow_core::eval::{evaluate, MetricReport, Split};
use windflow_core::nets::Attention;
use windflow_core::raster::read_dataset;
use windflow_core::train::{self, TrainData, FINAL_CHECKPOINT};

use crate::compose::{compose, Arch, AttPlace, SpecFlags};
use crate::error::CliError;
use crate::{claim_dir, AblateArgs, Report};

pub const TABLE_FILE: &str = "table.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationTable {
    /// pix2pix with and without spectral normalization.
    Sn,
    /// Four models by none / SDF / CoordConv / both.
    Positional,
    /// Self-attention and CBAM placements on pix2pix with SN.
    Attention,
}

/// One table cell before training.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub row: String,
    pub column: String,
    pub flags: SpecFlags,
}

impl Cell {
    fn dir_name(&self) -> String {
        format!("{}__{}", self.row, self.column)
    }
}

fn with(arch: Arch, edit: impl FnOnce(&mut SpecFlags)) -> SpecFlags {
    let mut f = SpecFlags::new(arch);
    edit(&mut f);
    f
}

/// Rows, columns and cells of a table, row-major.
pub fn grid(table: AblationTable, dataset: &str) -> (Vec<String>, Vec<String>, Vec<Cell>) {
    let cell = |row: &str, column: &str, flags: SpecFlags| Cell {
        row: row.into(),
        column: column.into(),
        flags,
    };
    let mut cells = Vec::new();
    let (rows, columns): (Vec<&str>, Vec<&str>) = match table {
        AblationTable::Sn => {
            cells.push(cell(dataset, "pix2pix", SpecFlags::new(Arch::Pix2pix)));
            cells.push(cell(dataset, "pix2pix_sn", with(Arch::Pix2pix, |f| f.sn = true)));
            (vec![dataset], vec!["pix2pix", "pix2pix_sn"])
        }
        AblationTable::Positional => {
            let rows = [
                ("pix2pix", Arch::Pix2pix, false),
                ("pix2pix_sn", Arch::Pix2pix, true),
                ("cyclegan", Arch::Cyclegan, false),
                ("unet", Arch::Unet, false),
            ];
            let columns = [("none", false, false), ("sdf", true, false), ("coordconv", false, true), ("sdf_coordconv", true, true)];
            for (row, arch, sn) in rows {
                for (column, sdf, coordconv) in columns {
                    cells.push(cell(
                        row,
                        column,
                        with(arch, |f| {
                            f.sn = sn;
                            f.sdf = sdf;
                            f.coordconv = coordconv;
                        }),
                    ));
                }
            }
            (rows.iter().map(|r| r.0).collect(), columns.iter().map(|c| c.0).collect())
        }
        AblationTable::Attention => {
            let columns = [("D", AttPlace::D, false), ("G", AttPlace::G, false), ("both", AttPlace::Both, false), ("G_sdf_coordconv", AttPlace::G, true)];
            for (row, attention) in [("self", Attention::SelfAttention), ("cbam", Attention::Cbam)] {
                for (column, place, positional) in columns {
                    cells.push(cell(
                        row,
                        column,
                        with(Arch::Pix2pix, |f| {
                            f.sn = true;
                            f.attention = attention;
                            f.att_place = place;
                            f.sdf = positional;
                            f.coordconv = positional;
                        }),
                    ));
                }
            }
            (vec!["self", "cbam"], columns.iter().map(|c| c.0).collect())
        }
    };
    (rows.into_iter().map(String::from).collect(), columns.into_iter().map(String::from).collect(), cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub row: String,
    pub column: String,
    pub spec_hash: String,
    pub mae: f64,
    pub mae_std: f64,
    pub rmse: f64,
    pub rmse_std: f64,
    pub mre: f64,
    pub mre_std: f64,
    pub checkpoints: Vec<PathBuf>,
}

impl CellResult {
    fn new(cell: &Cell, report: &MetricReport, checkpoints: Vec<PathBuf>) -> Self {
        Self {
            row: cell.row.clone(),
            column: cell.column.clone(),
            spec_hash: report.per_seed[0].spec_hash.clone(),
            mae: report.mae,
            mae_std: report.mae_std,
            rmse: report.rmse,
            rmse_std: report.rmse_std,
            mre: report.mre,
            mre_std: report.mre_std,
            checkpoints,
        }
    }
}

pub fn run(a: &AblateArgs, force: bool) -> Result<Report, CliError> {
    if a.seeds == 0 || a.jobs == 0 {
        return Err(CliError::user("--seeds and --jobs must be at least 1"));
    }
    let (manifest, samples) = read_dataset(&a.data).map_err(|e| CliError::at(&a.data)(e.into()))?;
    let (rows, columns, cells) = grid(a.table, &manifest.name);
    let channels = manifest.geometry_channels().len();
    let specs = cells
        .iter()
        .map(|c| compose(&c.flags, channels, manifest.size))
        .collect::<Result<Vec<_>, _>>()?;
    a.hyper.config(a.seed, None).validate()?;
    claim_dir(&a.out, force)?;

    let seeds: Vec<u64> = (0..a.seeds as u64).map(|k| a.seed + k).collect();
    let data = TrainData::from_dataset(&manifest, &samples);
    let runs: Vec<(usize, u64)> = (0..cells.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let run_dir = |i: usize, seed: u64| a.out.join(cells[i].dir_name()).join(format!("seed_{seed}"));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    pool.install(|| {
        runs.par_iter().try_for_each(|&(i, seed)| -> Result<(), CliError> {
            let dir = run_dir(i, seed);
            std::fs::create_dir_all(&dir)?;
            log::info!("training {} / {} seed {seed}", cells[i].row, cells[i].column);
            train::train(&data, &specs[i], &a.hyper.config(seed, Some(dir)))?;
            Ok(())
        })
    })?;

    let mut results = Vec::with_capacity(cells.len());
    for (i, cell) in cells.iter().enumerate() {
        let paths: Vec<PathBuf> = seeds.iter().map(|&s| run_dir(i, s).join(FINAL_CHECKPOINT)).collect();
        let ckpts = paths.iter().map(|p| load_checkpoint(p)).collect::<Result<Vec<_>, _>>()?;
        let eval = evaluate(&ckpts, &manifest, &samples, Split::Test)?;
        results.push(CellResult::new(cell, &eval.report, paths));
    }

    let mut json = json!({
        "table": a.table,
        "dataset": manifest.name,
        "family": manifest.family,
        "split": Split::Test,
        "units": "fraction_of_v_max",
        "seeds": seeds,
        "epochs": a.hyper.epochs,
        "rows": rows,
        "columns": columns,
        "cells": results,
    });
    if a.table == AblationTable::Sn {
        let (base, sn) = (&results[0], &results[1]);
        let gain = |b: f64, s: f64| 100.0 * (b - s) / b;
        json["improvement_pct"] = json!({
            "mae": gain(base.mae, sn.mae),
            "rmse": gain(base.rmse, sn.rmse),
            "mre": gain(base.mre, sn.mre),
        });
    }
    std::fs::write(a.out.join(TABLE_FILE), serde_json::to_vec_pretty(&json)?)?;

    let name = a.table.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
    let mut human = vec![format!("{name} table on {}, {} seed(s), test MAE:", manifest.name, seeds.len())];
    human.push(std::iter::once(format!("{:<16}", "")).chain(columns.iter().map(|c| format!("{c:>20}"))).collect());
    for row in &rows {
        let line: String = std::iter::once(format!("{row:<16}"))
            .chain(columns.iter().map(|c| {
                results
                    .iter()
                    .find(|r| &r.row == row && &r.column == c)
                    .map_or(format!("{:>20}", "-"), |r| format!("{:>20}", format!("{:.4} ± {:.4}", r.mae, r.mae_std)))
            }))
            .collect();
        human.push(line);
    }
    human.push(format!("wrote {}", a.out.join(TABLE_FILE).display()));
    Ok(Report { json, human })
}
