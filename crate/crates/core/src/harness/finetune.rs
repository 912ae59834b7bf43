use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ccva::{self, CalibrationReport, GaussianSpec};
use crate::classifier::{self, ClassifierHead};
use crate::error::{Error, Result};
use crate::fdbo::{self, Region};
use crate::geometry::FeatureVector;
use crate::harness::config::ExperimentConfig;
use crate::harness::train::BaseArtifacts;
use crate::harness::world::World;
use crate::memory_bank::{ClassId, MemoryBank};
use crate::rng::{self, SeedStreams};

/// Loss terms of one fine-tuning step, evaluated before the update. Terms of
/// disabled modules are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Indices into the balanced set.
    pub batch: Vec<usize>,
    pub total: f64,
    pub ce: f64,
    pub cls_weighted: Option<f64>,
    pub edge: Option<f64>,
    pub aug: Option<f64>,
    pub importance: Vec<fdbo::ImportanceAssignment>,
}

/// One dumped importance assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub step: usize,
    pub sample: usize,
    pub region: Region,
    pub d_in: f64,
    /// `None` for samples whose density was not evaluated.
    pub d_sim: Option<f64>,
    pub weight: f64,
}

/// Running importance-weight statistics over the steps where reweighting was active.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportanceStats {
    pub active_steps: usize,
    pub samples: usize,
    pub edge_samples: usize,
    pub high: usize,
    pub low: usize,
    pub mean_weight: f64,
    pub mean_edge_weight: f64,
}

#[derive(Debug, Default)]
struct StatsAccumulator {
    active_steps: usize,
    samples: usize,
    edges: usize,
    high: usize,
    low: usize,
    weight_sum: f64,
    edge_weight_sum: f64,
}

impl StatsAccumulator {
    fn record(&mut self, step: usize, assignments: &[fdbo::ImportanceAssignment], mut dump: Option<&mut Vec<ImportanceRow>>) {
        self.active_steps += 1;
        for a in assignments {
            self.samples += 1;
            self.weight_sum += a.weight;
            if a.similar_class.is_some() {
                self.edges += 1;
                self.edge_weight_sum += a.weight;
            }
            match a.region {
                Region::High => self.high += 1,
                Region::Low => self.low += 1,
                Region::Central => {}
            }
            if let Some(rows) = dump.as_deref_mut() {
                rows.push(ImportanceRow {
                    step,
                    sample: a.sample_index,
                    region: a.region,
                    d_in: a.d_in_value,
                    d_sim: a.d_sim_value.is_finite().then_some(a.d_sim_value),
                    weight: a.weight,
                });
            }
        }
    }

    fn finish(&self) -> ImportanceStats {
        let ratio = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        ImportanceStats {
            active_steps: self.active_steps,
            samples: self.samples,
            edge_samples: self.edges,
            high: self.high,
            low: self.low,
            mean_weight: ratio(self.weight_sum, self.samples),
            mean_edge_weight: ratio(self.edge_weight_sum, self.edges),
        }
    }
}

/// Fine-tuning state for one seed.
///
/// The bank starts from the base bank trimmed to an even per-class share of
/// the capacity, then receives the balanced set and, with CCVA on, the
/// generated reverse samples. It is not written to during the steps.
pub struct FineTuneSession<'w> {
    world: &'w World,
    config: ExperimentConfig,
    head: ClassifierHead,
    bank: MemoryBank,
    balanced: Vec<(ClassId, FeatureVector)>,
    specs: Vec<GaussianSpec>,
    calibration: Vec<CalibrationReport>,
    batch_rng: ChaCha8Rng,
    aug_rng: ChaCha8Rng,
    step: usize,
    stats: StatsAccumulator,
    dump: Vec<ImportanceRow>,
}

/// `k` shots per class, class-major, from the `shots` stream.
pub fn draw_balanced_set(world: &World, k: usize, seed: u64) -> Vec<(ClassId, FeatureVector)> {
    let mut rng = SeedStreams::new(seed).stream(rng::SHOTS);
    let mut out = Vec::with_capacity(k * world.num_classes());
    for c in world.base_classes().into_iter().chain(world.novel_classes()) {
        for _ in 0..k {
            out.push((c, world.sample_train(c, &mut rng)));
        }
    }
    out
}

impl<'w> FineTuneSession<'w> {
    pub fn new(artifacts: &BaseArtifacts, world: &'w World, config: &ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let dim = world.dim();
        if artifacts.head.dim() != dim || artifacts.bank.dim() != dim || artifacts.ifc.dim() != dim {
            return Err(Error::CheckpointMismatch(format!(
                "base artifacts have dimension {}, world has {dim}",
                artifacts.head.dim()
            )));
        }
        if artifacts.head.num_classes() != world.num_base() {
            return Err(Error::CheckpointMismatch(format!(
                "base head has {} classes, world has {} base classes",
                artifacts.head.num_classes(),
                world.num_base()
            )));
        }
        let streams = SeedStreams::new(seed);
        let mut head = artifacts.head.clone();
        head.extend(world.num_novel(), &mut streams.stream(rng::HEAD_INIT));

        let balanced = draw_balanced_set(world, config.k_shot, seed);
        let mut bank = artifacts.bank.clone();
        bank.retain_recent((bank.capacity() / world.num_classes()).max(1));
        for (c, x) in &balanced {
            bank.insert(*c, x.clone())?;
        }

        let base = world.base_classes();
        let mut specs = Vec::new();
        let mut calibration = Vec::new();
        if config.ccva_enabled {
            for novel in world.novel_classes() {
                let shots: Vec<FeatureVector> =
                    balanced.iter().filter(|(c, _)| *c == novel).map(|(_, x)| x.clone()).collect();
                let report = ccva::calibrate_center(
                    &mut bank,
                    &artifacts.ifc,
                    novel,
                    &shots,
                    config.lrsample_count,
                    &base,
                )?;
                specs.push(ccva::variance_transfer(
                    novel,
                    &artifacts.base_stats,
                    &report.center_after,
                    config.k_similar,
                )?);
                calibration.push(report);
            }
        }

        Ok(FineTuneSession {
            world,
            config: config.clone(),
            head,
            bank,
            balanced,
            specs,
            calibration,
            batch_rng: streams.stream(rng::BATCHES),
            aug_rng: streams.stream(rng::AUGMENTATION),
            step: 0,
            stats: StatsAccumulator::default(),
            dump: Vec::new(),
        })
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    pub fn balanced_set(&self) -> &[(ClassId, FeatureVector)] {
        &self.balanced
    }

    pub fn calibration(&self) -> &[CalibrationReport] {
        &self.calibration
    }

    pub fn gaussian_specs(&self) -> &[GaussianSpec] {
        &self.specs
    }

    pub fn world(&self) -> &World {
        self.world
    }

    /// One SGD step on the balanced set.
    pub fn step(&mut self) -> Result<StepRecord> {
        let cfg = &self.config;
        let batch: Vec<usize> = (0..cfg.batch_size)
            .map(|_| self.batch_rng.random_range(0..self.balanced.len()))
            .collect();
        let features: Vec<FeatureVector> = batch.iter().map(|&i| self.balanced[i].1.clone()).collect();
        let labels: Vec<ClassId> = batch.iter().map(|&i| self.balanced[i].0).collect();
        let n = batch.len() as f64;

        let mut logits = Vec::with_capacity(batch.len());
        let mut losses = Vec::with_capacity(batch.len());
        let mut dce = Vec::with_capacity(batch.len());
        for (x, &y) in features.iter().zip(&labels) {
            let l = self.head.logits(x)?;
            let (ce, g) = classifier::cross_entropy_with_grad(&l, y)?;
            logits.push(l);
            losses.push(ce);
            dce.push(g);
        }
        let ce = losses.iter().sum::<f64>() / n;
        let mut total = ce;
        let mut coef = vec![1.0 / n; batch.len()];

        let mut cls_weighted = None;
        let mut edge = None;
        let mut importance = Vec::new();
        if cfg.fdbo_enabled && self.step >= cfg.warmup_steps {
            let prototypes = self.bank.prototypes()?;
            let bank = &self.bank;
            importance = fdbo::assign_batch(
                &features,
                &labels,
                &logits,
                &losses,
                &prototypes,
                |c| bank.class_pool(c),
                cfg.density,
                &cfg.reweight,
            )?;
            let v: Vec<f64> = importance.iter().map(|a| a.weight).collect();
            let lw = fdbo::loss_cls_weighted(&losses, &v)?;
            let le = fdbo::loss_edge(&v)?;
            total += lw + cfg.lambda3 * le;
            for (c, w) in coef.iter_mut().zip(&v) {
                *c += w / n;
            }
            if cfg.edge_grad {
                let de = fdbo::loss_edge_gradient(&v)?;
                for (i, a) in importance.iter().enumerate() {
                    let dv = cfg.reweight.weight_derivative(losses[i], a.region);
                    coef[i] += (losses[i] / n + cfg.lambda3 * de[i]) * dv;
                }
            }
            let dump = cfg.dump_importance.then_some(&mut self.dump);
            self.stats.record(self.step, &importance, dump);
            cls_weighted = Some(lw);
            edge = Some(le);
        }

        let mut grads = self.head.zero_gradients();
        let mut aug = None;
        if cfg.ccva_enabled && cfg.aug_per_class > 0 && !self.specs.is_empty() {
            let mut sum = 0.0;
            let m = (self.specs.len() * cfg.aug_per_class) as f64;
            for spec in &self.specs {
                for x in ccva::sample_augmented_with(spec, cfg.aug_per_class, &mut self.aug_rng) {
                    let l = self.head.logits(&x)?;
                    let (ce, mut g) = classifier::cross_entropy_with_grad(&l, spec.class)?;
                    sum += ce;
                    g.iter_mut().for_each(|v| *v *= cfg.lambda4 / m);
                    self.head.backward(&x, &g, &mut grads);
                }
            }
            let la = sum / m;
            total += cfg.lambda4 * la;
            aug = Some(la);
        }

        for ((x, g), c) in features.iter().zip(&mut dce).zip(&coef) {
            g.iter_mut().for_each(|v| *v *= c);
            self.head.backward(x, g, &mut grads);
        }
        if !total.is_finite() {
            return Err(Error::NonFinite("fine-tuning loss"));
        }
        self.head.apply(&grads, cfg.lr_finetune);

        let record = StepRecord {
            step: self.step,
            batch,
            total,
            ce,
            cls_weighted,
            edge,
            aug,
            importance,
        };
        self.step += 1;
        Ok(record)
    }

    pub fn importance_stats(&self) -> ImportanceStats {
        self.stats.finish()
    }

    pub fn into_parts(self) -> (ClassifierHead, Vec<CalibrationReport>, ImportanceStats, Vec<ImportanceRow>) {
        let stats = self.stats.finish();
        (self.head, self.calibration, stats, self.dump)
    }
}

/// Result of a full fine-tuning run.
#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneOutcome {
    pub head: ClassifierHead,
    pub calibration: Vec<CalibrationReport>,
    pub importance: ImportanceStats,
    pub importance_rows: Vec<ImportanceRow>,
    pub loss_curve: Vec<f64>,
}

pub fn fine_tune(artifacts: &BaseArtifacts, world: &World, config: &ExperimentConfig, seed: u64) -> Result<FineTuneOutcome> {
    let mut session = FineTuneSession::new(artifacts, world, config, seed)?;
    let mut loss_curve = Vec::with_capacity(config.finetune_steps);
    for _ in 0..config.finetune_steps {
        loss_curve.push(session.step()?.total);
    }
    let (head, calibration, importance, importance_rows) = session.into_parts();
    Ok(FineTuneOutcome {
        head,
        calibration,
        importance,
        importance_rows,
        loss_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::train::base_train;
    use crate::harness::world::generate_world;

    fn setup() -> (ExperimentConfig, World, BaseArtifacts) {
        let mut c = ExperimentConfig::default();
        c.world.dim = 6;
        c.world.base_classes = 4;
        c.world.novel_classes = 2;
        c.base_steps = 80;
        c.warmup_steps = 20;
        c.batch_size = 8;
        c.k_shot = 2;
        let w = World::Synthetic(generate_world(&c, 5).unwrap());
        let a = base_train(&w, &c, 5).unwrap();
        (c, w, a)
    }

    #[test]
    fn balanced_set_has_k_per_class() {
        let (c, w, a) = setup();
        let s = FineTuneSession::new(&a, &w, &c, 5).unwrap();
        for class in 0..6 {
            assert_eq!(s.balanced_set().iter().filter(|(k, _)| k.index() == class).count(), 2);
        }
        assert_eq!(s.head().num_classes(), 6);
        assert_eq!(s.calibration().len(), 2);
        // shots plus two generated samples per shot
        assert_eq!(s.bank().class_len(ClassId(4)), 2 + 2 * 2);
    }

    #[test]
    fn baseline_total_is_mean_ce() {
        let (mut c, w, a) = setup();
        c.ccva_enabled = false;
        c.fdbo_enabled = false;
        c.lambda3 = 0.0;
        c.lambda4 = 0.0;
        let mut s = FineTuneSession::new(&a, &w, &c, 5).unwrap();
        for _ in 0..10 {
            let r = s.step().unwrap();
            assert_eq!(r.total, r.ce);
            assert!(r.cls_weighted.is_none() && r.edge.is_none() && r.aug.is_none());
        }
    }

    #[test]
    fn module_toggles_keep_batches_paired() {
        let (mut c, w, a) = setup();
        c.warmup_steps = 0;
        let mut on = FineTuneSession::new(&a, &w, &c, 5).unwrap();
        c.ccva_enabled = false;
        c.fdbo_enabled = false;
        let mut off = FineTuneSession::new(&a, &w, &c, 5).unwrap();
        assert_eq!(on.balanced_set(), off.balanced_set());
        for _ in 0..5 {
            let (x, y) = (on.step().unwrap(), off.step().unwrap());
            assert_eq!(x.batch, y.batch);
            assert!(x.edge.is_some() && x.aug.is_some());
        }
    }

    #[test]
    fn fine_tune_is_deterministic() {
        let (mut c, w, a) = setup();
        c.finetune_steps = 30;
        c.warmup_steps = 5;
        c.dump_importance = true;
        let x = fine_tune(&a, &w, &c, 5).unwrap();
        assert_eq!(x, fine_tune(&a, &w, &c, 5).unwrap());
        assert_eq!(x.loss_curve.len(), 30);
        assert_eq!(x.importance.samples, 25 * 8);
        assert_eq!(x.importance_rows.len(), 25 * 8);
    }

    #[test]
    fn mismatched_artifacts_are_rejected() {
        let (c, w, mut a) = setup();
        a.head = ClassifierHead::zeros(3, 6);
        assert!(matches!(
            FineTuneSession::new(&a, &w, &c, 5),
            Err(Error::CheckpointMismatch(_))
        ));
    }
}
