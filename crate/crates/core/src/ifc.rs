//! Intra-class feature converter.
//!
//! A single-hidden-layer perceptron `t = W2 relu(W1 x + b1) + b2` trained to
//! map a feature onto its selected local reverse sample (cosine alignment)
//! while keeping the output classified as the input's class. Gradients are
//! closed form for this fixed architecture.

use rand::Rng;

use crate::classifier::{self, ClassifierHead, HeadGradients};
use crate::error::{check_dim, Error, Result};
use crate::geometry::{self, FeatureVector, NORM_EPS};
use crate::memory_bank::ClassId;

#[derive(Debug, Clone, PartialEq)]
pub struct IfcModel {
    dim: usize,
    hidden: usize,
    /// Row-major `hidden x dim`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major `dim x hidden`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Gradient of the converter objective, laid out like [`IfcModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct IfcGradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IfcTrainBatch {
    pub inputs: Vec<FeatureVector>,
    pub targets: Vec<FeatureVector>,
    pub classes: Vec<ClassId>,
}

impl IfcTrainBatch {
    pub fn new(inputs: Vec<FeatureVector>, targets: Vec<FeatureVector>, classes: Vec<ClassId>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput);
        }
        check_dim(inputs.len(), targets.len())?;
        check_dim(inputs.len(), classes.len())?;
        Ok(IfcTrainBatch {
            inputs,
            targets,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Loss weights of the converter objective `l_trans * L_trans + l_spec * L_spec`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IfcLossWeights {
    pub trans: f64,
    pub spec: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IfcObjective {
    pub loss_trans: f64,
    pub loss_spec: f64,
    pub total: f64,
}

struct Activations {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    out: Vec<f64>,
}

impl IfcModel {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        IfcModel {
            dim,
            hidden,
            w1: vec![0.0; hidden * dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; dim * hidden],
            b2: vec![0.0; dim],
        }
    }

    /// Uniform fan-in initialization in `[-1/sqrt(dim), 1/sqrt(dim)]`.
    pub fn init<R: Rng>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        let s = 1.0 / (dim as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-s..=s)).collect::<Vec<_>>();
        IfcModel {
            dim,
            hidden,
            w1: draw(hidden * dim),
            b1: draw(hidden),
            w2: draw(dim * hidden),
            b2: draw(dim),
        }
    }

    pub fn from_parts(
        dim: usize,
        hidden: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    ) -> Result<Self> {
        check_dim(hidden * dim, w1.len())?;
        check_dim(hidden, b1.len())?;
        check_dim(dim * hidden, w2.len())?;
        check_dim(dim, b2.len())?;
        let m = IfcModel {
            dim,
            hidden,
            w1,
            b1,
            w2,
            b2,
        };
        if m.params().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("converter parameters"));
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2)
    }

    fn activations(&self, x: &[f64]) -> Result<Activations> {
        check_dim(self.dim, x.len())?;
        let pre: Vec<f64> = (0..self.hidden)
            .map(|k| geometry::dot(&self.w1[k * self.dim..(k + 1) * self.dim], x) + self.b1[k])
            .collect();
        let hidden: Vec<f64> = pre.iter().map(|z| z.max(0.0)).collect();
        let out: Vec<f64> = (0..self.dim)
            .map(|j| geometry::dot(&self.w2[j * self.hidden..(j + 1) * self.hidden], &hidden) + self.b2[j])
            .collect();
        Ok(Activations { pre, hidden, out })
    }

    pub fn forward(&self, x: &[f64]) -> Result<FeatureVector> {
        let out = self.activations(x)?.out;
        FeatureVector::new(out)
    }

    pub fn zero_gradients(&self) -> IfcGradients {
        IfcGradients {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        }
    }

    pub fn apply(&mut self, grads: &IfcGradients, lr: f64) {
        let pairs = [
            (&mut self.w1, &grads.w1),
            (&mut self.b1, &grads.b1),
            (&mut self.w2, &grads.w2),
            (&mut self.b2, &grads.b2),
        ];
        for (p, g) in pairs {
            for (v, d) in p.iter_mut().zip(g.iter()) {
                *v -= lr * d;
            }
        }
    }

    /// Objective value and gradients with respect to the converter. When
    /// `head_grads` is given, the `L_spec` gradient with respect to the head
    /// is accumulated into it as well.
    pub fn objective_and_gradients(
        &self,
        batch: &IfcTrainBatch,
        head: &ClassifierHead,
        weights: IfcLossWeights,
        mut head_grads: Option<&mut HeadGradients>,
    ) -> Result<(IfcObjective, IfcGradients)> {
        check_dim(head.dim(), self.dim)?;
        let n = batch.len() as f64;
        let mut grads = self.zero_gradients();
        let mut trans_sum = 0.0;
        let mut spec_sum = 0.0;

        for ((x, y), &class) in batch.inputs.iter().zip(&batch.targets).zip(&batch.classes) {
            check_dim(self.dim, y.dim())?;
            let act = self.activations(x)?;
            let t = &act.out;

            let nt = geometry::norm(t);
            let ny = geometry::norm(y);
            if !(nt > NORM_EPS) || !(ny > NORM_EPS) {
                return Err(Error::ZeroVector);
            }
            let cos = geometry::dot(t, y) / (nt * ny);
            trans_sum += 1.0 - cos;
            // d(1 - cos)/dt = cos * t / |t|^2 - y / (|t||y|)
            let mut dt: Vec<f64> = t
                .iter()
                .zip(y.iter())
                .map(|(ti, yi)| weights.trans / n * (cos * ti / (nt * nt) - yi / (nt * ny)))
                .collect();

            let logits = head.logits(t)?;
            let (ce, mut dlogits) = classifier::cross_entropy_with_grad(&logits, class)?;
            spec_sum += ce;
            dlogits.iter_mut().for_each(|g| *g *= weights.spec / n);
            let mut scratch;
            let hg = match head_grads.as_deref_mut() {
                Some(g) => g,
                None => {
                    scratch = head.zero_gradients();
                    &mut scratch
                }
            };
            let dt_spec = head.backward(t, &dlogits, hg);
            for (a, b) in dt.iter_mut().zip(dt_spec) {
                *a += b;
            }

            let mut dh = vec![0.0; self.hidden];
            for j in 0..self.dim {
                let g = dt[j];
                grads.b2[j] += g;
                let row = &self.w2[j * self.hidden..(j + 1) * self.hidden];
                let grow = &mut grads.w2[j * self.hidden..(j + 1) * self.hidden];
                for k in 0..self.hidden {
                    grow[k] += g * act.hidden[k];
                    dh[k] += g * row[k];
                }
            }
            for k in 0..self.hidden {
                if act.pre[k] <= 0.0 {
                    continue;
                }
                let g = dh[k];
                grads.b1[k] += g;
                let grow = &mut grads.w1[k * self.dim..(k + 1) * self.dim];
                for (gw, xi) in grow.iter_mut().zip(x.iter()) {
                    *gw += g * xi;
                }
            }
        }

        let loss_trans = trans_sum / n;
        let loss_spec = spec_sum / n;
        Ok((
            IfcObjective {
                loss_trans,
                loss_spec,
                total: weights.trans * loss_trans + weights.spec * loss_spec,
            },
            grads,
        ))
    }
}

/// `(1/n) Σ (1 - cos(t_i, y_i))`, in `[0, 2]`.
pub fn loss_trans(transferred: &[FeatureVector], targets: &[FeatureVector]) -> Result<f64> {
    check_dim(transferred.len(), targets.len())?;
    if transferred.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for (t, y) in transferred.iter().zip(targets) {
        total += 1.0 - geometry::cosine_sim(t, y)?;
    }
    Ok(total / transferred.len() as f64)
}

/// Mean cross-entropy of classifier logits of generated features against their classes.
pub fn loss_spec(logits: &[Vec<f64>], classes: &[ClassId]) -> Result<f64> {
    classifier::mean_cross_entropy(logits, classes)
}

/// One gradient-descent step on the converter; the head is read only.
/// Returns the objective evaluated before the step.
pub fn ifc_train_step(
    model: &mut IfcModel,
    batch: &IfcTrainBatch,
    head: &ClassifierHead,
    weights: IfcLossWeights,
    lr: f64,
) -> Result<IfcObjective> {
    let (obj, grads) = model.objective_and_gradients(batch, head, weights, None)?;
    model.apply(&grads, lr);
    Ok(obj)
}

/// Like [`ifc_train_step`], but the `L_spec` gradient also updates the head.
pub fn ifc_train_step_joint(
    model: &mut IfcModel,
    batch: &IfcTrainBatch,
    head: &mut ClassifierHead,
    weights: IfcLossWeights,
    lr: f64,
) -> Result<IfcObjective> {
    let mut hg = head.zero_gradients();
    let (obj, grads) = model.objective_and_gradients(batch, head, weights, Some(&mut hg))?;
    model.apply(&grads, lr);
    head.apply(&hg, lr);
    Ok(obj)
}

/// Cascaded generation: `out[0] = f(x)`, `out[k] = f(out[k-1])`.
pub fn generate_lrsamples(model: &IfcModel, x: &[f64], count: usize) -> Result<Vec<FeatureVector>> {
    if count == 0 {
        return Err(Error::InvalidConfig("lrsample count must be at least 1".into()));
    }
    let mut out: Vec<FeatureVector> = Vec::with_capacity(count);
    let mut current = model.forward(x)?;
    for _ in 1..count {
        let next = model.forward(&current)?;
        out.push(std::mem::replace(&mut current, next));
    }
    out.push(current);
    Ok(out)
}
