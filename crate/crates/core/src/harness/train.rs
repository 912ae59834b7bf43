use std::collections::BTreeMap;

use rand::Rng;

use crate::ccva::{self, BaseStats};
use crate::classifier::{self, ClassifierHead};
use crate::error::{Error, Result};
use crate::geometry::FeatureVector;
use crate::harness::config::ExperimentConfig;
use crate::harness::world::World;
use crate::ifc::{self, IfcLossWeights, IfcModel, IfcTrainBatch};
use crate::memory_bank::{ClassId, MemoryBank};
use crate::rng::{self, SeedStreams};
use crate::selection::ClassFrame;

/// Everything fine-tuning needs from the base stage.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseArtifacts {
    pub head: ClassifierHead,
    pub ifc: IfcModel,
    pub bank: MemoryBank,
    /// Frozen per-base-class statistics of the final bank.
    pub base_stats: BaseStats,
    /// Converter objective per step after warm-up, evaluated before each update.
    pub ifc_curve: Vec<f64>,
    /// Mean classification loss per step.
    pub cls_curve: Vec<f64>,
}

/// Draws `n` labelled samples, classes uniform over `classes`.
pub(crate) fn draw_batch<R: Rng>(
    world: &World,
    classes: &[ClassId],
    n: usize,
    rng: &mut R,
) -> (Vec<FeatureVector>, Vec<ClassId>) {
    let labels: Vec<ClassId> = (0..n).map(|_| classes[rng.random_range(0..classes.len())]).collect();
    let features = labels.iter().map(|&c| world.sample_train(c, rng)).collect();
    (features, labels)
}

/// One plain cross-entropy SGD step on `head`; returns the mean loss before the update.
pub(crate) fn ce_step(head: &mut ClassifierHead, features: &[FeatureVector], labels: &[ClassId], lr: f64) -> Result<f64> {
    let n = features.len() as f64;
    let mut grads = head.zero_gradients();
    let mut total = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let logits = head.logits(x)?;
        let (ce, mut g) = classifier::cross_entropy_with_grad(&logits, y)?;
        total += ce;
        g.iter_mut().for_each(|v| *v /= n);
        head.backward(x, &g, &mut grads);
    }
    head.apply(&grads, lr);
    Ok(total / n)
}

/// Base training: each step takes a classifier step, pushes the batch into the
/// bank, and once the warm-up is over trains the converter towards the
/// reverse samples selected from the bank.
pub fn base_train(world: &World, config: &ExperimentConfig, seed: u64) -> Result<BaseArtifacts> {
    config.validate()?;
    let dim = world.dim();
    let base = world.base_classes();
    let streams = SeedStreams::new(seed);
    let mut head = ClassifierHead::zeros(base.len(), dim);
    let mut ifc_model = IfcModel::init(dim, config.ifc_hidden.unwrap_or(dim), &mut streams.stream(rng::IFC_INIT));
    let mut bank = MemoryBank::new(dim, config.bank_capacity)?;
    let mut rng = streams.stream(rng::BASE_BATCHES);
    let weights = IfcLossWeights {
        trans: config.lambda1,
        spec: config.lambda2,
    };

    let mut ifc_curve = Vec::new();
    let mut cls_curve = Vec::with_capacity(config.base_steps);
    for step in 0..config.base_steps {
        let (features, labels) = draw_batch(world, &base, config.batch_size, &mut rng);
        cls_curve.push(ce_step(&mut head, &features, &labels, config.lr_base)?);
        for (x, &y) in features.iter().zip(&labels) {
            bank.insert(y, x.clone())?;
        }
        if step < config.warmup_steps {
            continue;
        }

        let mut inputs = Vec::with_capacity(features.len());
        let mut targets = Vec::with_capacity(features.len());
        let mut classes = Vec::with_capacity(features.len());
        let mut frames: BTreeMap<ClassId, Option<ClassFrame>> = BTreeMap::new();
        for (x, &y) in features.iter().zip(&labels) {
            if !frames.contains_key(&y) {
                let frame = match ClassFrame::new(&bank, y) {
                    Ok(f) => Some(f),
                    Err(Error::InsufficientPool { .. }) => None,
                    Err(e) => return Err(e),
                };
                frames.insert(y, frame);
            }
            if let Some(frame) = &frames[&y] {
                let sel = frame.select(x, config.fusion)?;
                inputs.push(x.clone());
                targets.push(sel.target);
                classes.push(y);
            }
        }
        if inputs.is_empty() {
            continue;
        }
        let batch = IfcTrainBatch::new(inputs, targets, classes)?;
        let obj = if config.joint_flow {
            ifc::ifc_train_step_joint(&mut ifc_model, &batch, &mut head, weights, config.lr_base)?
        } else {
            ifc::ifc_train_step(&mut ifc_model, &batch, &head, weights, config.lr_base)?
        };
        ifc_curve.push(obj.total);
    }
    log::debug!(
        "seed {seed}: base training done, final ce {:?}, final ifc {:?}",
        cls_curve.last(),
        ifc_curve.last()
    );

    let present: Vec<ClassId> = base.iter().copied().filter(|&c| bank.class_len(c) > 0).collect();
    let base_stats = ccva::bank_stats(&bank, &present)?;
    Ok(BaseArtifacts {
        head,
        ifc: ifc_model,
        bank,
        base_stats,
        ifc_curve,
        cls_curve,
    })
}
