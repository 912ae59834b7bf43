//! Command-line front end.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::ablation::{self, AblationReport};
use crate::harness::{self, BaseArtifacts, EmpiricalWorld, ExperimentConfig, World};
use crate::io::checkpoint::{self, CheckpointMeta};
use crate::io::feature_file::FeatureFile;
use crate::io::metrics::{self, ManifestRecord, MetricsFile, Modules, RunManifest, TOOL_VERSION};
use crate::rng::{self, SeedStreams};

#[derive(Debug, Parser)]
#[command(name = "lrcalib", version, about = "Few-shot center calibration and boundary reweighting simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Settings shared by every experiment command. Flags override config-file keys.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Config file listing every key (defaults are used when omitted).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run a single root seed.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated root seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Feature file replacing the synthetic world.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub k_shot: Option<usize>,
    #[arg(long)]
    pub no_ccva: bool,
    #[arg(long)]
    pub no_fdbo: bool,
    /// linear, exp or sigmoid
    #[arg(long)]
    pub g_family: Option<String>,
    #[arg(long)]
    pub lrsamples: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub d_in: Option<f64>,
    /// Override any config key, e.g. `--set train.finetune_steps=300`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic world draw as a feature file.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Base-train every seed and write one checkpoint directory per seed.
    BaseTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune every seed and write a metrics file.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Directory written by `base-train`; base training runs in-process when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep a grid of settings with paired seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// e.g. "lrsamples=0,1,2,3 shots=1,2"
        #[arg(long)]
        grid: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a metrics file and optionally write plot-data tables.
    Report {
        metrics: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn effective_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            ExperimentConfig::from_text(&text)?
        }
        None => ExperimentConfig::default(),
    };
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    if let Some(s) = &common.seeds {
        cfg.seeds = harness::config::parse_seeds(s)?;
    }
    if let Some(k) = common.k_shot {
        cfg.k_shot = k;
    }
    if common.no_ccva {
        cfg.ccva_enabled = false;
    }
    if common.no_fdbo {
        cfg.fdbo_enabled = false;
    }
    if let Some(g) = &common.g_family {
        cfg.reweight.family = g.parse()?;
    }
    if let Some(n) = common.lrsamples {
        cfg.lrsample_count = n;
    }
    if let Some(eta) = common.eta {
        cfg.density.eta = eta;
    }
    if let Some(d) = common.d_in {
        cfg.density.d_in = d;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_features(common: &Common) -> Result<Option<EmpiricalWorld>> {
    match &common.features {
        Some(p) => Ok(Some(EmpiricalWorld::from_feature_file(&FeatureFile::read(p)?)?)),
        None => Ok(None),
    }
}

fn world_for(config: &ExperimentConfig, features: Option<&EmpiricalWorld>, seed: u64) -> Result<World> {
    match features {
        Some(w) => {
            if w.dim != config.world.dim {
                log::warn!("feature file dimension {} overrides world.dim {}", w.dim, config.world.dim);
            }
            Ok(World::Empirical(w.clone()))
        }
        None => Ok(World::Synthetic(harness::generate_world(config, seed)?)),
    }
}

fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}

fn config_hash(config: &ExperimentConfig) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(config.to_text().as_bytes()))
}

fn base_for(
    config: &ExperimentConfig,
    checkpoint: Option<&Path>,
    world: &World,
    seed: u64,
) -> Result<BaseArtifacts> {
    let Some(root) = checkpoint else {
        return harness::base_train(world, config, seed);
    };
    let (artifacts, meta) = checkpoint::load(&seed_dir(root, seed))?;
    if meta.seed != seed
        || meta.dim != world.dim()
        || meta.num_base != world.num_base()
        || meta.num_novel != world.num_novel()
    {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint for seed {} has d={}, {} base / {} novel classes; run expects seed {seed}, d={}, {} / {}",
            meta.seed,
            meta.dim,
            meta.num_base,
            meta.num_novel,
            world.dim(),
            world.num_base(),
            world.num_novel()
        )));
    }
    Ok(artifacts)
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn manifest(command: &str, config: &ExperimentConfig, inputs: BTreeMap<String, String>, out: &Path) -> RunManifest {
    RunManifest {
        command: command.into(),
        tool_version: TOOL_VERSION.into(),
        config: config.to_text(),
        seeds: config.seeds.clone(),
        inputs,
        outputs: vec![out.display().to_string()],
    }
}

fn inputs_of(common: &Common, checkpoint: Option<&Path>) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    if let Some(f) = &common.features {
        m.insert("features".into(), f.display().to_string());
    }
    if let Some(c) = checkpoint {
        m.insert("checkpoint".into(), c.display().to_string());
    }
    m
}

pub fn cmd_gen(common: &Common, out: &Path) -> Result<()> {
    let config = effective_config(common)?;
    let seed = config.seeds[0];
    if config.seeds.len() > 1 {
        log::info!("gen uses the first seed ({seed}) only");
    }
    let world = harness::generate_world(&config, seed)?;
    let file = world.to_feature_file(config.world.samples_per_class, &mut SeedStreams::new(seed).stream(rng::GEN));
    file.write(out)?;
    log::info!("wrote {} rows to {}", file.rows.len(), out.display());
    Ok(())
}

pub fn cmd_base_train(common: &Common, out: &Path) -> Result<()> {
    let started = now_unix();
    let config = effective_config(common)?;
    let features = load_features(common)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let hash = config_hash(&config);
    config
        .seeds
        .par_iter()
        .map(|&seed| {
            let world = world_for(&config, features.as_ref(), seed)?;
            let artifacts = harness::base_train(&world, &config, seed)?;
            let meta = CheckpointMeta {
                seed,
                dim: world.dim(),
                num_base: world.num_base(),
                num_novel: world.num_novel(),
                config_hash: hash.clone(),
                features: common.features.as_ref().map(|p| p.display().to_string()),
            };
            checkpoint::save(&seed_dir(out, seed), &artifacts, &meta)?;
            log::info!("seed {seed}: checkpoint written");
            Ok(())
        })
        .collect::<Result<Vec<()>>>()?;
    let m = manifest("base-train", &config, inputs_of(common, None), out);
    let record = ManifestRecord {
        manifest_hash: m.hash(),
        manifest: m,
        started_unix: started,
        finished_unix: now_unix(),
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&record).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Runs `finetune` and returns the metrics without writing them.
pub fn finetune_metrics(common: &Common, checkpoint: Option<&Path>, out: &Path) -> Result<MetricsFile> {
    let config = effective_config(common)?;
    let features = load_features(common)?;
    let seeds = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let world = world_for(&config, features.as_ref(), seed)?;
            let base = base_for(&config, checkpoint, &world, seed)?;
            harness::run_seed(&world, &base, &config, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregate = harness::aggregate(&seeds);
    let m = manifest("finetune", &config, inputs_of(common, checkpoint), out);
    Ok(MetricsFile {
        manifest_hash: m.hash(),
        manifest: m,
        modules: Modules {
            ccva: config.ccva_enabled,
            fdbo: config.fdbo_enabled,
        },
        k_shot: config.k_shot,
        seeds,
        aggregate: Some(aggregate),
        ablation: None,
    })
}

pub fn ablate_metrics(common: &Common, grid: &str, checkpoint: Option<&Path>, out: &Path) -> Result<MetricsFile> {
    let config = effective_config(common)?;
    let grid = ablation::parse_grid(grid)?;
    let features = load_features(common)?;
    let report = ablation::run_ablation(
        &config,
        &grid,
        |seed| world_for(&config, features.as_ref(), seed),
        |seed, world| base_for(&config, checkpoint, world, seed),
    )?;
    let mut inputs = inputs_of(common, checkpoint);
    inputs.insert("grid".into(), grid.to_spec());
    let m = manifest("ablate", &config, inputs, out);
    Ok(MetricsFile {
        manifest_hash: m.hash(),
        manifest: m,
        modules: Modules {
            ccva: config.ccva_enabled,
            fdbo: config.fdbo_enabled,
        },
        k_shot: config.k_shot,
        seeds: Vec::new(),
        aggregate: None,
        ablation: Some(report),
    })
}

fn write_metrics(file: &MetricsFile, out: &Path, started: u64) -> Result<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    file.write(out)?;
    metrics::write_sidecar(
        out,
        &ManifestRecord {
            manifest_hash: file.manifest_hash.clone(),
            manifest: file.manifest.clone(),
            started_unix: started,
            finished_unix: now_unix(),
        },
    )
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn render_ablation(report: &AblationReport, s: &mut String) {
    let _ = writeln!(s, "ablation grid: {}", report.grid);
    for table in &report.tables {
        let _ = writeln!(s, "\n[{}]", table.axis);
        let _ = writeln!(
            s,
            "{:>5}  {:>10}  {:>15}  {:>15}  {:>15}  cell",
            "shot", "value", "novel %", "base %", "overall %"
        );
        for r in &table.rows {
            let _ = writeln!(
                s,
                "{:>5}  {:>10}  {:>15}  {:>15}  {:>15}  {}",
                r.shot,
                r.value,
                format!("{} ± {}", pct(r.novel.mean), pct(r.novel.std)),
                format!("{} ± {}", pct(r.base.mean), pct(r.base.std)),
                format!("{} ± {}", pct(r.overall.mean), pct(r.overall.std)),
                r.label
            );
        }
    }
}

/// Human-readable summary of a metrics file.
pub fn render_report(file: &MetricsFile) -> String {
    let mut s = String::new();
    let m = &file.manifest;
    let _ = writeln!(s, "command: {}  (manifest {})", m.command, &file.manifest_hash[..12.min(file.manifest_hash.len())]);
    let _ = writeln!(
        s,
        "k-shot: {}  ccva: {}  fdbo: {}  seeds: {}",
        file.k_shot,
        if file.modules.ccva { "on" } else { "off" },
        if file.modules.fdbo { "on" } else { "off" },
        m.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
    );
    if !file.seeds.is_empty() {
        let _ = writeln!(s, "\n{:>6}  {:>8}  {:>8}  {:>9}  {:>11}", "seed", "novel %", "base %", "overall %", "mean weight");
        for r in &file.seeds {
            let _ = writeln!(
                s,
                "{:>6}  {:>8}  {:>8}  {:>9}  {:>11.4}",
                r.seed,
                pct(r.accuracy.novel),
                pct(r.accuracy.base),
                pct(r.accuracy.overall),
                r.importance.mean_weight
            );
        }
    }
    if let Some(a) = &file.aggregate {
        let _ = writeln!(
            s,
            "\nmean ± std over {} seeds: novel {} ± {}  base {} ± {}  overall {} ± {}",
            a.seeds,
            pct(a.novel.mean),
            pct(a.novel.std),
            pct(a.base.mean),
            pct(a.base.std),
            pct(a.overall.mean),
            pct(a.overall.std)
        );
        if !a.calibration.is_empty() {
            let _ = writeln!(s, "\ncenter distance to the similar base class");
            let _ = writeln!(s, "{:>6}  {:>17}  {:>17}  {:>9}", "class", "dist w/o", "dist w/", "increased");
            for c in &a.calibration {
                let _ = writeln!(
                    s,
                    "{:>6}  {:>17}  {:>17}  {:>9}",
                    c.class.0,
                    format!("{:.4} ± {:.4}", c.dist_without.mean, c.dist_without.std),
                    format!("{:.4} ± {:.4}", c.dist_with.mean, c.dist_with.std),
                    format!("{}/{}", c.increased, c.seeds)
                );
            }
        }
    }
    if let Some(r) = &file.ablation {
        s.push('\n');
        render_ablation(r, &mut s);
    }
    s
}

/// Tab-separated plot-data tables keyed by file name.
pub fn plot_data(file: &MetricsFile) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    if let Some(a) = &file.aggregate {
        if !a.calibration.is_empty() {
            let mut t = String::from("class\tdist_without\tdist_without_std\tdist_with\tdist_with_std\n");
            for c in &a.calibration {
                let _ = writeln!(
                    t,
                    "{}\t{}\t{}\t{}\t{}",
                    c.class, c.dist_without.mean, c.dist_without.std, c.dist_with.mean, c.dist_with.std
                );
            }
            out.insert("calibration.tsv".into(), t);
        }
    }
    if !file.seeds.is_empty() {
        let len = file.seeds.iter().map(|r| r.curves.finetune.len()).min().unwrap_or(0);
        let mut t = String::from("step\tloss\tstd\n");
        for i in 0..len {
            let col: Vec<f64> = file.seeds.iter().map(|r| r.curves.finetune[i]).collect();
            let ms = harness::mean_std(&col);
            let _ = writeln!(t, "{i}\t{}\t{}", ms.mean, ms.std);
        }
        out.insert("finetune_loss.tsv".into(), t);
    }
    if let Some(r) = &file.ablation {
        for table in &r.tables {
            let mut t = String::from("shot\tx\ty\tstd\tcell\n");
            for row in &table.rows {
                let _ = writeln!(t, "{}\t{}\t{}\t{}\t{}", row.shot, row.value, row.novel.mean, row.novel.std, row.label);
            }
            out.insert(format!("ablation_{}.tsv", table.axis), t);
        }
    }
    out
}

pub fn cmd_report(metrics_path: &Path, out: Option<&Path>) -> Result<String> {
    let file = MetricsFile::read(metrics_path)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in plot_data(&file) {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(render_report(&file))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common, out } => cmd_gen(&common, &out),
        Command::BaseTrain { common, out } => cmd_base_train(&common, &out),
        Command::Finetune { common, checkpoint, out } => {
            let started = now_unix();
            let file = finetune_metrics(&common, checkpoint.as_deref(), &out)?;
            write_metrics(&file, &out, started)
        }
        Command::Ablate {
            common,
            grid,
            checkpoint,
            out,
        } => {
            let started = now_unix();
            let file = ablate_metrics(&common, &grid, checkpoint.as_deref(), &out)?;
            write_metrics(&file, &out, started)
        }
        Command::Report { metrics, out } => {
            print!("{}", cmd_report(&metrics, out.as_deref())?);
            Ok(())
        }
    }
}
