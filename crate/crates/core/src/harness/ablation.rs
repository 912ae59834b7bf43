//! Grid sweeps over fine-tuning settings with paired seeds.
//!
//! A grid spec is a whitespace-separated list of `axis=v1,v2,...` terms, e.g.
//! `lrsamples=0,1,2,3 shots=1,2,3`. Every cell of the cartesian product is
//! fine-tuned from the same per-seed world and base artifacts.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::eval::Accuracy;
use crate::harness::train::BaseArtifacts;
use crate::harness::world::World;
use crate::harness::{mean_std, run_seed, MeanStd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Lrsamples,
    Shots,
    G,
    Eta,
    DIn,
    Components,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Lrsamples => "lrsamples",
            Axis::Shots => "shots",
            Axis::G => "g",
            Axis::Eta => "eta",
            Axis::DIn => "d_in",
            Axis::Components => "components",
        }
    }

    /// Writes one axis value into `config`.
    pub fn apply(self, config: &mut ExperimentConfig, value: &str) -> Result<()> {
        let bad = || Error::InvalidGrid(format!("{}: bad value `{value}`", self.as_str()));
        match self {
            Axis::Lrsamples => config.lrsample_count = value.parse().map_err(|_| bad())?,
            Axis::Shots => config.k_shot = value.parse().map_err(|_| bad())?,
            Axis::G => config.reweight.family = value.parse().map_err(|_| bad())?,
            Axis::Eta => config.density.eta = value.parse().map_err(|_| bad())?,
            Axis::DIn => config.density.d_in = value.parse().map_err(|_| bad())?,
            Axis::Components => {
                let (ccva, fdbo) = match value {
                    "none" => (false, false),
                    "ccva" => (true, false),
                    "fdbo" => (false, true),
                    "both" => (true, true),
                    _ => return Err(bad()),
                };
                config.ccva_enabled = ccva;
                config.fdbo_enabled = fdbo;
            }
        }
        config
            .validate()
            .map_err(|e| Error::InvalidGrid(format!("{}={value}: {e}", self.as_str())))
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lrsamples" => Axis::Lrsamples,
            "shots" => Axis::Shots,
            "g" => Axis::G,
            "eta" => Axis::Eta,
            "d_in" => Axis::DIn,
            "components" => Axis::Components,
            other => return Err(Error::InvalidGrid(format!("unknown axis `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub axes: Vec<(Axis, Vec<String>)>,
}

/// One grid cell: a value for every swept axis, in grid order.
pub type Cell = Vec<(Axis, String)>;

pub fn parse_grid(spec: &str) -> Result<Grid> {
    let mut axes: Vec<(Axis, Vec<String>)> = Vec::new();
    for term in spec.split_whitespace() {
        let (name, values) = term
            .split_once('=')
            .ok_or_else(|| Error::InvalidGrid(format!("expected `axis=v1,v2`, got `{term}`")))?;
        let axis: Axis = name.parse()?;
        if axes.iter().any(|(a, _)| *a == axis) {
            return Err(Error::InvalidGrid(format!("axis `{axis}` given twice")));
        }
        let values: Vec<String> = values.split(',').map(str::trim).map(String::from).collect();
        if values.iter().any(String::is_empty) {
            return Err(Error::InvalidGrid(format!("axis `{axis}` has an empty value")));
        }
        let mut probe = ExperimentConfig::default();
        for v in &values {
            axis.apply(&mut probe, v)?;
        }
        axes.push((axis, values));
    }
    if axes.is_empty() {
        return Err(Error::InvalidGrid("grid is empty".into()));
    }
    Ok(Grid { axes })
}

impl Grid {
    pub fn cell_count(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    /// Cartesian product, last axis varying fastest.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells: Vec<Cell> = vec![Vec::new()];
        for (axis, values) in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|cell| {
                    values.iter().map(move |v| {
                        let mut c = cell.clone();
                        c.push((*axis, v.clone()));
                        c
                    })
                })
                .collect();
        }
        cells
    }

    pub fn to_spec(&self) -> String {
        self.axes
            .iter()
            .map(|(a, v)| format!("{a}={}", v.join(",")))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAccuracy {
    pub seed: u64,
    pub accuracy: Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub shot: usize,
    /// Non-shot axis values of this cell.
    pub settings: BTreeMap<String, String>,
    pub label: String,
    pub novel: MeanStd,
    pub base: MeanStd,
    pub overall: MeanStd,
    pub per_seed: Vec<SeedAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub shot: usize,
    pub value: String,
    pub label: String,
    pub novel: MeanStd,
    pub base: MeanStd,
    pub overall: MeanStd,
}

/// Every cell, keyed by `(shot, value)` of one swept axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: String,
    pub rows: Vec<AblationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub grid: String,
    pub cells: Vec<AblationCell>,
    pub tables: Vec<AblationTable>,
}

fn label_of(cell: &Cell) -> String {
    let parts: Vec<String> = cell
        .iter()
        .filter(|(a, _)| *a != Axis::Shots)
        .map(|(a, v)| format!("{a}={v}"))
        .collect();
    if parts.is_empty() {
        "default".into()
    } else {
        parts.join(" ")
    }
}

/// Runs every cell on every seed of `config`. Seeds run in parallel; each
/// seed draws its world and base artifacts once and shares them across cells.
pub fn run_ablation<W, B>(config: &ExperimentConfig, grid: &Grid, world_of: W, base_of: B) -> Result<AblationReport>
where
    W: Fn(u64) -> Result<World> + Sync,
    B: Fn(u64, &World) -> Result<BaseArtifacts> + Sync,
{
    let cells = grid.cells();
    let configs = cells
        .iter()
        .map(|cell| {
            let mut c = config.clone();
            for (axis, v) in cell {
                axis.apply(&mut c, v)?;
            }
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;

    let per_seed: Vec<Vec<Accuracy>> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let world = world_of(seed)?;
            let base = base_of(seed, &world)?;
            configs
                .iter()
                .map(|c| run_seed(&world, &base, c, seed).map(|r| r.accuracy))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out_cells = Vec::with_capacity(cells.len());
    for (i, (cell, c)) in cells.iter().zip(&configs).enumerate() {
        let accs: Vec<SeedAccuracy> = config
            .seeds
            .iter()
            .zip(&per_seed)
            .map(|(&seed, row)| SeedAccuracy { seed, accuracy: row[i] })
            .collect();
        let col = |f: fn(&Accuracy) -> f64| mean_std(&accs.iter().map(|a| f(&a.accuracy)).collect::<Vec<_>>());
        out_cells.push(AblationCell {
            shot: c.k_shot,
            settings: cell
                .iter()
                .filter(|(a, _)| *a != Axis::Shots)
                .map(|(a, v)| (a.to_string(), v.clone()))
                .collect(),
            label: label_of(cell),
            novel: col(|a| a.novel),
            base: col(|a| a.base),
            overall: col(|a| a.overall),
            per_seed: accs,
        });
    }

    let mut table_axes: Vec<Axis> = grid.axes.iter().map(|(a, _)| *a).filter(|a| *a != Axis::Shots).collect();
    if table_axes.is_empty() {
        table_axes.push(Axis::Shots);
    }
    let tables = table_axes
        .into_iter()
        .map(|axis| AblationTable {
            axis: axis.to_string(),
            rows: cells
                .iter()
                .zip(&out_cells)
                .map(|(cell, c)| AblationRow {
                    shot: c.shot,
                    value: cell
                        .iter()
                        .find(|(a, _)| *a == axis)
                        .map(|(_, v)| v.clone())
                        .unwrap_or_default(),
                    label: c.label.clone(),
                    novel: c.novel,
                    base: c.base,
                    overall: c.overall,
                })
                .collect(),
        })
        .collect();

    Ok(AblationReport {
        grid: grid.to_spec(),
        cells: out_cells,
        tables,
    })
}
