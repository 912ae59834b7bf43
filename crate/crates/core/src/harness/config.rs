//! Experiment configuration as flat `key = value` text with dotted sections.
//!
//! A config file must list every key. Values given on the command line are
//! applied afterwards through [`ExperimentConfig::set`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdbo::{DensityParams, ReweightFunction};
use crate::selection::FusionRule;

pub const ALLOWED_SHOTS: [usize; 5] = [1, 2, 3, 5, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub dim: usize,
    pub base_classes: usize,
    pub novel_classes: usize,
    /// Offset between each novel mean and its similar base mean.
    pub delta: f64,
    /// Per-component standard deviation scale of every class.
    pub spread: f64,
    /// Standard deviation of base-class mean components.
    pub mean_scale: f64,
    /// Rows per class written by `gen`.
    pub samples_per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub seeds: Vec<u64>,
    pub k_shot: usize,
    pub lr_base: f64,
    pub lr_finetune: f64,
    pub base_steps: usize,
    pub finetune_steps: usize,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub bank_capacity: usize,
    pub ccva_enabled: bool,
    pub lrsample_count: usize,
    pub k_similar: usize,
    pub aug_per_class: usize,
    /// Converter hidden width; `None` means equal to the feature dimension.
    pub ifc_hidden: Option<usize>,
    pub joint_flow: bool,
    pub fusion: FusionRule,
    pub fdbo_enabled: bool,
    pub reweight: ReweightFunction,
    pub edge_grad: bool,
    pub density: DensityParams,
    pub n_test: usize,
    pub dump_importance: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            world: WorldConfig {
                dim: 16,
                base_classes: 15,
                novel_classes: 5,
                delta: 1.0,
                spread: 1.0,
                mean_scale: 2.0,
                samples_per_class: 200,
            },
            seeds: vec![1, 2, 3, 4, 5],
            k_shot: 1,
            lr_base: 0.01,
            lr_finetune: 0.005,
            base_steps: 2000,
            finetune_steps: 600,
            batch_size: 32,
            warmup_steps: 200,
            lambda1: 0.05,
            lambda2: 0.4,
            lambda3: 0.3,
            lambda4: 0.1,
            bank_capacity: 4096,
            ccva_enabled: true,
            lrsample_count: 2,
            k_similar: 2,
            aug_per_class: 8,
            ifc_hidden: None,
            joint_flow: false,
            fusion: FusionRule::Raw,
            fdbo_enabled: true,
            reweight: ReweightFunction::default(),
            edge_grad: false,
            density: DensityParams::default(),
            n_test: 500,
            dump_importance: false,
        }
    }
}

/// Every key with its inline documentation, in file order.
const KEYS: &[(&str, &str)] = &[
    ("world.dim", "feature dimension"),
    ("world.base_classes", "number of base classes"),
    ("world.novel_classes", "number of novel classes"),
    ("world.delta", "distance from each novel mean to its similar base mean"),
    ("world.spread", "per-component class standard deviation scale"),
    ("world.mean_scale", "standard deviation of base mean components"),
    ("world.samples_per_class", "rows per class written by `gen`"),
    ("run.seeds", "comma-separated root seeds"),
    ("train.k_shot", "shots per class in the balanced fine-tune set (1, 2, 3, 5 or 10)"),
    ("train.lr_base", "base training learning rate"),
    ("train.lr_finetune", "fine-tuning learning rate"),
    ("train.base_steps", "base training iterations"),
    ("train.finetune_steps", "fine-tuning iterations"),
    ("train.batch_size", "samples per iteration"),
    ("train.warmup_steps", "iterations before the converter (base) and reweighting (fine-tune) start"),
    ("loss.lambda1", "weight of the converter alignment loss"),
    ("loss.lambda2", "weight of the converter class-consistency loss"),
    ("loss.lambda3", "weight of the weight-dispersion loss"),
    ("loss.lambda4", "weight of the augmented-sample loss"),
    ("bank.capacity", "total memory bank length"),
    ("ccva.enabled", "center calibration and variance augmentation"),
    ("ccva.lrsample_count", "cascaded reverse samples generated per shot"),
    ("ccva.k_similar", "nearest base classes whose variances are averaged"),
    ("ccva.aug_per_class", "augmented samples per novel class per iteration"),
    ("ccva.hidden", "converter hidden width, or `equal` for the feature dimension"),
    ("ccva.joint_flow", "let the class-consistency loss update the classifier"),
    ("selection.fusion", "`raw` softmax over criterion values, or `rank` over rank positions"),
    ("fdbo.enabled", "density-based boundary reweighting"),
    ("fdbo.g_family", "reweighting family: linear, exp or sigmoid"),
    ("fdbo.alpha", "reweighting amplitude"),
    ("fdbo.edge_grad", "backpropagate the dispersion loss through the weights"),
    ("density.d_in", "own-class coverage fraction defining the radius"),
    ("density.eta", "radius multiplier for the similar class"),
    ("eval.n_test", "test samples per class"),
    ("output.dump_importance", "write per-step importance assignments to the metrics file"),
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let seeds = value
        .split(',')
        .map(|s| parse_num::<u64>("run.seeds", s.trim()))
        .collect::<Result<Vec<_>>>()?;
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("`run.seeds` is empty".into()));
    }
    Ok(seeds)
}

impl ExperimentConfig {
    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|(k, _)| *k)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "world.dim" => self.world.dim = parse_num(key, v)?,
            "world.base_classes" => self.world.base_classes = parse_num(key, v)?,
            "world.novel_classes" => self.world.novel_classes = parse_num(key, v)?,
            "world.delta" => self.world.delta = parse_num(key, v)?,
            "world.spread" => self.world.spread = parse_num(key, v)?,
            "world.mean_scale" => self.world.mean_scale = parse_num(key, v)?,
            "world.samples_per_class" => self.world.samples_per_class = parse_num(key, v)?,
            "run.seeds" => self.seeds = parse_seeds(v)?,
            "train.k_shot" => self.k_shot = parse_num(key, v)?,
            "train.lr_base" => self.lr_base = parse_num(key, v)?,
            "train.lr_finetune" => self.lr_finetune = parse_num(key, v)?,
            "train.base_steps" => self.base_steps = parse_num(key, v)?,
            "train.finetune_steps" => self.finetune_steps = parse_num(key, v)?,
            "train.batch_size" => self.batch_size = parse_num(key, v)?,
            "train.warmup_steps" => self.warmup_steps = parse_num(key, v)?,
            "loss.lambda1" => self.lambda1 = parse_num(key, v)?,
            "loss.lambda2" => self.lambda2 = parse_num(key, v)?,
            "loss.lambda3" => self.lambda3 = parse_num(key, v)?,
            "loss.lambda4" => self.lambda4 = parse_num(key, v)?,
            "bank.capacity" => self.bank_capacity = parse_num(key, v)?,
            "ccva.enabled" => self.ccva_enabled = parse_bool(key, v)?,
            "ccva.lrsample_count" => self.lrsample_count = parse_num(key, v)?,
            "ccva.k_similar" => self.k_similar = parse_num(key, v)?,
            "ccva.aug_per_class" => self.aug_per_class = parse_num(key, v)?,
            "ccva.hidden" => {
                self.ifc_hidden = if v == "equal" { None } else { Some(parse_num(key, v)?) }
            }
            "ccva.joint_flow" => self.joint_flow = parse_bool(key, v)?,
            "selection.fusion" => self.fusion = v.parse()?,
            "fdbo.enabled" => self.fdbo_enabled = parse_bool(key, v)?,
            "fdbo.g_family" => self.reweight.family = v.parse()?,
            "fdbo.alpha" => self.reweight.alpha = parse_num(key, v)?,
            "fdbo.edge_grad" => self.edge_grad = parse_bool(key, v)?,
            "density.d_in" => self.density.d_in = parse_num(key, v)?,
            "density.eta" => self.density.eta = parse_num(key, v)?,
            "eval.n_test" => self.n_test = parse_num(key, v)?,
            "output.dump_importance" => self.dump_importance = parse_bool(key, v)?,
            other => return Err(Error::InvalidConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key {
            "world.dim" => self.world.dim.to_string(),
            "world.base_classes" => self.world.base_classes.to_string(),
            "world.novel_classes" => self.world.novel_classes.to_string(),
            "world.delta" => fmt_f(self.world.delta),
            "world.spread" => fmt_f(self.world.spread),
            "world.mean_scale" => fmt_f(self.world.mean_scale),
            "world.samples_per_class" => self.world.samples_per_class.to_string(),
            "run.seeds" => self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
            "train.k_shot" => self.k_shot.to_string(),
            "train.lr_base" => fmt_f(self.lr_base),
            "train.lr_finetune" => fmt_f(self.lr_finetune),
            "train.base_steps" => self.base_steps.to_string(),
            "train.finetune_steps" => self.finetune_steps.to_string(),
            "train.batch_size" => self.batch_size.to_string(),
            "train.warmup_steps" => self.warmup_steps.to_string(),
            "loss.lambda1" => fmt_f(self.lambda1),
            "loss.lambda2" => fmt_f(self.lambda2),
            "loss.lambda3" => fmt_f(self.lambda3),
            "loss.lambda4" => fmt_f(self.lambda4),
            "bank.capacity" => self.bank_capacity.to_string(),
            "ccva.enabled" => self.ccva_enabled.to_string(),
            "ccva.lrsample_count" => self.lrsample_count.to_string(),
            "ccva.k_similar" => self.k_similar.to_string(),
            "ccva.aug_per_class" => self.aug_per_class.to_string(),
            "ccva.hidden" => self.ifc_hidden.map_or("equal".to_string(), |h| h.to_string()),
            "ccva.joint_flow" => self.joint_flow.to_string(),
            "selection.fusion" => self.fusion.as_str().to_string(),
            "fdbo.enabled" => self.fdbo_enabled.to_string(),
            "fdbo.g_family" => self.reweight.family.as_str().to_string(),
            "fdbo.alpha" => fmt_f(self.reweight.alpha),
            "fdbo.edge_grad" => self.edge_grad.to_string(),
            "density.d_in" => fmt_f(self.density.d_in),
            "density.eta" => fmt_f(self.density.eta),
            "eval.n_test" => self.n_test.to_string(),
            "output.dump_importance" => self.dump_importance.to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// Parses a complete config document. Every key must appear exactly once.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::InvalidConfig(format!("duplicate key `{key}`")));
            }
            cfg.set(key, value)?;
        }
        if let Some(missing) = Self::keys().find(|k| !seen.contains(*k)) {
            return Err(Error::MissingConfigKey(missing.to_string()));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form, one documented key per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, doc) in KEYS {
            let sec = key.split('.').next().unwrap_or("");
            if sec != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = sec;
            }
            let _ = writeln!(out, "# {doc}");
            let _ = writeln!(out, "{key} = {}", self.get(key).unwrap_or_default());
        }
        out
    }

    pub fn ifc_hidden_width(&self) -> usize {
        self.ifc_hidden.unwrap_or(self.world.dim)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.world.dim < 2 {
            return bad(format!("world.dim must be at least 2, got {}", self.world.dim));
        }
        if self.world.base_classes == 0 || self.world.novel_classes == 0 {
            return bad("world needs at least one base and one novel class".into());
        }
        for (name, v) in [
            ("world.delta", self.world.delta),
            ("world.spread", self.world.spread),
            ("world.mean_scale", self.world.mean_scale),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be a nonnegative number, got {v}"));
            }
        }
        if !ALLOWED_SHOTS.contains(&self.k_shot) {
            return bad(format!("train.k_shot must be one of {ALLOWED_SHOTS:?}, got {}", self.k_shot));
        }
        for (name, v) in [
            ("train.lr_base", self.lr_base),
            ("train.lr_finetune", self.lr_finetune),
            ("fdbo.alpha", self.reweight.alpha),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("loss.lambda1", self.lambda1),
            ("loss.lambda2", self.lambda2),
            ("loss.lambda3", self.lambda3),
            ("loss.lambda4", self.lambda4),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be nonnegative, got {v}"));
            }
        }
        if self.batch_size == 0 || self.bank_capacity == 0 || self.n_test == 0 || self.k_similar == 0 {
            return bad("batch size, bank capacity, eval.n_test and ccva.k_similar must be positive".into());
        }
        if self.k_similar > self.world.base_classes {
            return bad("ccva.k_similar exceeds the number of base classes".into());
        }
        if self.ifc_hidden == Some(0) {
            return bad("ccva.hidden must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("run.seeds is empty".into());
        }
        DensityParams::new(self.density.d_in, self.density.eta)?;
        Ok(())
    }
}

/// Shortest round-tripping decimal form.
fn fmt_f(v: f64) -> String {
    let s = format!("{v}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}
