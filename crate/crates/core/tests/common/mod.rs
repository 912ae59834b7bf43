#![allow(dead_code)]

//! Independent oracles written directly from the defining formulas, sharing
//! no code with the library beyond its public types.

use lrcalib::classifier::ClassifierHead;
use lrcalib::ifc::{IfcLossWeights, IfcModel, IfcTrainBatch};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

pub fn naive_softmax(v: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

/// Exhaustive fused-score evaluation; first index wins ties.
pub fn selection_oracle(x: &[f64], pool: &[Vec<f64>]) -> usize {
    let d = x.len();
    let mut mean = vec![0.0; d];
    for v in pool {
        for j in 0..d {
            mean[j] += v[j] / pool.len() as f64;
        }
    }
    let p = unit(&mean);
    let xh = unit(x);
    let dx: Vec<f64> = (0..d).map(|j| xh[j] - p[j]).collect();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for v in pool {
        let vh = unit(v);
        let dv: Vec<f64> = (0..d).map(|j| vh[j] - p[j]).collect();
        a.push(cos(&dx, &dv));
        b.push((dot(&xh, &p) - dot(&vh, &p)).abs());
    }
    let pa = naive_softmax(&a);
    let pb = naive_softmax(&b);
    let mut best = 0;
    for i in 1..pool.len() {
        if pa[i] + pb[i] < pa[best] + pb[best] {
            best = i;
        }
    }
    best
}

pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    -(logits[label].exp() / z).ln()
}

pub fn head_logits(head: &ClassifierHead, x: &[f64]) -> Vec<f64> {
    (0..head.num_classes())
        .map(|c| dot(head.row(c), x) + head.bias[c])
        .collect()
}

/// `W2 relu(W1 x + b1) + b2` by explicit loops.
pub fn ifc_forward(model: &IfcModel, x: &[f64]) -> Vec<f64> {
    let (d, h) = (model.dim(), model.hidden());
    let mut hid = vec![0.0; h];
    for k in 0..h {
        let mut s = model.b1[k];
        for j in 0..d {
            s += model.w1[k * d + j] * x[j];
        }
        hid[k] = s.max(0.0);
    }
    let mut t = vec![0.0; d];
    for i in 0..d {
        let mut s = model.b2[i];
        for k in 0..h {
            s += model.w2[i * h + k] * hid[k];
        }
        t[i] = s;
    }
    t
}

/// `λ1 mean(1 - cos(t, y)) + λ2 mean CE(head(t), class)` by explicit loops.
pub fn ifc_objective(model: &IfcModel, batch: &IfcTrainBatch, head: &ClassifierHead, w: IfcLossWeights) -> f64 {
    let n = batch.len() as f64;
    let mut trans = 0.0;
    let mut spec = 0.0;
    for ((x, y), c) in batch.inputs.iter().zip(&batch.targets).zip(&batch.classes) {
        let t = ifc_forward(model, x);
        trans += 1.0 - cos(&t, y);
        spec += cross_entropy(&head_logits(head, &t), c.index());
    }
    w.trans * trans / n + w.spec * spec / n
}

pub fn mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    m.iter().map(|a| a / rows.len() as f64).collect()
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn unit_distance(a: &[f64], b: &[f64]) -> f64 {
    euclid(&unit(a), &unit(b))
}

/// Mutable view of every converter parameter, in block order.
pub fn param_mut(model: &mut IfcModel, mut i: usize) -> &mut f64 {
    for block in [&mut model.w1, &mut model.b1, &mut model.w2, &mut model.b2] {
        if i < block.len() {
            return &mut block[i];
        }
        i -= block.len();
    }
    panic!("parameter index out of range")
}

pub fn param_count(model: &IfcModel) -> usize {
    model.w1.len() + model.b1.len() + model.w2.len() + model.b2.len()
}

/// Largest relative error between analytic and central-difference
/// gradients over every converter parameter.
pub fn ifc_gradient_error(
    model: &IfcModel,
    batch: &IfcTrainBatch,
    head: &ClassifierHead,
    w: IfcLossWeights,
    eps: f64,
) -> f64 {
    let (_, g) = model.objective_and_gradients(batch, head, w, None).unwrap();
    let analytic: Vec<f64> = g.w1.iter().chain(&g.b1).chain(&g.w2).chain(&g.b2).copied().collect();
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let mut plus = model.clone();
        *param_mut(&mut plus, i) += eps;
        let mut minus = model.clone();
        *param_mut(&mut minus, i) -= eps;
        let numeric = (ifc_objective(&plus, batch, head, w) - ifc_objective(&minus, batch, head, w)) / (2.0 * eps);
        let scale = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / scale);
    }
    worst
}

pub fn random_vec(rng: &mut ChaCha8Rng, d: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_head(rng: &mut ChaCha8Rng, classes: usize, d: usize) -> ClassifierHead {
    ClassifierHead::from_parts(
        classes,
        d,
        random_vec(rng, classes * d, -1.0, 1.0),
        random_vec(rng, classes, -0.5, 0.5),
    )
    .unwrap()
}

/// `(1/n) Σ |v_i - mean| / v_i`.
pub fn loss_edge_oracle(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).abs() / x).sum::<f64>() / n
}
