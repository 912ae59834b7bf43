//! Linear classification head and cross-entropy helpers.

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::geometry;
use crate::memory_bank::ClassId;

/// `logits = W x + b`, one row of `W` per class id.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    dim: usize,
    num_classes: usize,
    /// Row-major `num_classes x dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient with respect to head parameters, same layout as the head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ClassifierHead {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        ClassifierHead {
            dim,
            num_classes,
            weights: vec![0.0; num_classes * dim],
            bias: vec![0.0; num_classes],
        }
    }

    pub fn from_parts(num_classes: usize, dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        check_dim(num_classes * dim, weights.len())?;
        check_dim(num_classes, bias.len())?;
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("classifier parameters"));
        }
        Ok(ClassifierHead {
            dim,
            num_classes,
            weights,
            bias,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.dim..(class + 1) * self.dim]
    }

    /// Appends `extra` classes with weights drawn uniformly from `[-s, s]`,
    /// `s = 1/sqrt(dim)`, and zero bias.
    pub fn extend<R: Rng>(&mut self, extra: usize, rng: &mut R) {
        let s = 1.0 / (self.dim as f64).sqrt();
        for _ in 0..extra * self.dim {
            self.weights.push(rng.random_range(-s..=s));
        }
        self.bias.extend(std::iter::repeat(0.0).take(extra));
        self.num_classes += extra;
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        Ok((0..self.num_classes)
            .map(|c| geometry::dot(self.row(c), x) + self.bias[c])
            .collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let logits = self.logits(x)?;
        geometry::argmax(&logits).ok_or(Error::EmptyInput)
    }

    pub fn zero_gradients(&self) -> HeadGradients {
        HeadGradients {
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    /// Accumulates `dlogits` backpropagated through the head at input `x`
    /// into `grads`, and returns the gradient with respect to `x`.
    pub fn backward(&self, x: &[f64], dlogits: &[f64], grads: &mut HeadGradients) -> Vec<f64> {
        let mut dx = vec![0.0; self.dim];
        for (c, &g) in dlogits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = self.row(c);
            let grow = &mut grads.weights[c * self.dim..(c + 1) * self.dim];
            for j in 0..self.dim {
                grow[j] += g * x[j];
                dx[j] += g * row[j];
            }
            grads.bias[c] += g;
        }
        dx
    }

    pub fn apply(&mut self, grads: &HeadGradients, lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            *w -= lr * g;
        }
        for (b, g) in self.bias.iter_mut().zip(&grads.bias) {
            *b -= lr * g;
        }
    }
}

/// `-ln softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: ClassId) -> Result<f64> {
    if label.index() >= logits.len() {
        return Err(Error::DimensionMismatch {
            expected: label.index() + 1,
            got: logits.len(),
        });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    Ok(geometry::log_sum_exp(logits) - logits[label.index()])
}

/// Cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy_with_grad(logits: &[f64], label: ClassId) -> Result<(f64, Vec<f64>)> {
    let loss = cross_entropy(logits, label)?;
    let mut grad = geometry::softmax(logits)?;
    grad[label.index()] -= 1.0;
    Ok((loss, grad))
}

/// Mean cross-entropy over aligned rows.
pub fn mean_cross_entropy(logits: &[Vec<f64>], labels: &[ClassId]) -> Result<f64> {
    check_dim(logits.len(), labels.len())?;
    if logits.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for (row, &label) in logits.iter().zip(labels) {
        total += cross_entropy(row, label)?;
    }
    Ok(total / logits.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_basics() {
        let uniform = vec![0.0; 4];
        assert!((cross_entropy(&uniform, ClassId(2)).unwrap() - 4f64.ln()).abs() < 1e-15);
        let mut peaked = vec![0.0; 3];
        peaked[1] = 1000.0;
        assert!(cross_entropy(&peaked, ClassId(1)).unwrap() < 1e-12);
        assert!(cross_entropy(&peaked, ClassId(3)).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let head = ClassifierHead::from_parts(
            3,
            2,
            vec![0.5, -0.2, 0.1, 0.3, -0.4, 0.8],
            vec![0.1, 0.0, -0.1],
        )
        .unwrap();
        let x = [0.7, -1.3];
        let label = ClassId(2);
        let (_, dl) = cross_entropy_with_grad(&head.logits(&x).unwrap(), label).unwrap();
        let mut grads = head.zero_gradients();
        let dx = head.backward(&x, &dl, &mut grads);
        let eps = 1e-6;
        for i in 0..head.weights.len() {
            let mut p = head.clone();
            p.weights[i] += eps;
            let mut m = head.clone();
            m.weights[i] -= eps;
            let fd = (cross_entropy(&p.logits(&x).unwrap(), label).unwrap()
                - cross_entropy(&m.logits(&x).unwrap(), label).unwrap())
                / (2.0 * eps);
            assert!((fd - grads.weights[i]).abs() < 1e-8);
        }
        for j in 0..2 {
            let mut xp = x;
            xp[j] += eps;
            let mut xm = x;
            xm[j] -= eps;
            let fd = (cross_entropy(&head.logits(&xp).unwrap(), label).unwrap()
                - cross_entropy(&head.logits(&xm).unwrap(), label).unwrap())
                / (2.0 * eps);
            assert!((fd - dx[j]).abs() < 1e-8);
        }
    }
}
