//! Desk-scale few-shot experiment engine.

pub mod ablation;
pub mod config;
pub mod eval;
pub mod finetune;
pub mod train;
pub mod world;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::memory_bank::ClassId;

pub use config::ExperimentConfig;
pub use eval::{evaluate, Accuracy};
pub use finetune::{fine_tune, FineTuneOutcome, FineTuneSession, ImportanceRow, ImportanceStats, StepRecord};
pub use train::{base_train, BaseArtifacts};
pub use world::{generate_world, EmpiricalWorld, SyntheticWorld, World};

/// One novel class's center distances without and with the generated samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub class: ClassId,
    pub similar_base: ClassId,
    pub dist_without: f64,
    pub dist_with: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurves {
    pub base_cls: Vec<f64>,
    pub base_ifc: Vec<f64>,
    pub finetune: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub accuracy: Accuracy,
    pub calibration: Vec<CalibrationRow>,
    pub importance: ImportanceStats,
    pub curves: LossCurves,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub importance_rows: Vec<ImportanceRow>,
}

/// Fine-tunes from `artifacts` and evaluates the result.
pub fn run_seed(world: &World, artifacts: &BaseArtifacts, config: &ExperimentConfig, seed: u64) -> Result<SeedResult> {
    let out = fine_tune(artifacts, world, config, seed)?;
    let accuracy = evaluate(&out.head, world, config.n_test, seed)?;
    let calibration = out
        .calibration
        .iter()
        .map(|r| CalibrationRow {
            class: r.class,
            similar_base: r.similar_base,
            dist_without: r.dist_to_similar_before,
            dist_with: r.dist_to_similar_after,
        })
        .collect();
    Ok(SeedResult {
        seed,
        accuracy,
        calibration,
        importance: out.importance,
        curves: LossCurves {
            base_cls: artifacts.cls_curve.clone(),
            base_ifc: artifacts.ifc_curve.clone(),
            finetune: out.loss_curve,
        },
        importance_rows: out.importance_rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd { mean: 0.0, std: 0.0 };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    MeanStd { mean, std }
}

/// Per novel class, center distances averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub class: ClassId,
    pub dist_without: MeanStd,
    pub dist_with: MeanStd,
    /// Seeds on which the distance grew.
    pub increased: usize,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds: usize,
    pub novel: MeanStd,
    pub base: MeanStd,
    pub overall: MeanStd,
    pub mean_weight: MeanStd,
    pub calibration: Vec<CalibrationSummary>,
}

pub fn aggregate(results: &[SeedResult]) -> Aggregate {
    let col = |f: &dyn Fn(&SeedResult) -> f64| -> MeanStd { mean_std(&results.iter().map(f).collect::<Vec<_>>()) };
    let mut by_class: std::collections::BTreeMap<ClassId, Vec<&CalibrationRow>> = Default::default();
    for r in results {
        for row in &r.calibration {
            by_class.entry(row.class).or_default().push(row);
        }
    }
    let calibration = by_class
        .into_iter()
        .map(|(class, rows)| CalibrationSummary {
            class,
            dist_without: mean_std(&rows.iter().map(|r| r.dist_without).collect::<Vec<_>>()),
            dist_with: mean_std(&rows.iter().map(|r| r.dist_with).collect::<Vec<_>>()),
            increased: rows.iter().filter(|r| r.dist_with > r.dist_without).count(),
            seeds: rows.len(),
        })
        .collect();
    Aggregate {
        seeds: results.len(),
        novel: col(&|r| r.accuracy.novel),
        base: col(&|r| r.accuracy.base),
        overall: col(&|r| r.accuracy.overall),
        mean_weight: col(&|r| r.importance.mean_weight),
        calibration,
    }
}
