//! Local reverse sample selection.
//!
//! For an input feature, look through the memory-bank pool of its class for
//! the stored feature that points the opposite way from the input in the
//! prototype reference frame (criterion A) while sitting at about the same
//! similarity to the prototype (criterion B). Both raw score sequences are
//! softmax-normalized, summed, and the argmin is taken.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{self, FeatureVector, UnitVector};
use crate::memory_bank::{ClassId, MemoryBank};

/// How the two criteria are mapped to probabilities before fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionRule {
    /// Softmax over the raw criterion values.
    #[default]
    Raw,
    /// Softmax over ascending rank positions of each criterion.
    Rank,
}

impl FromStr for FusionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(FusionRule::Raw),
            "rank" => Ok(FusionRule::Rank),
            other => Err(Error::InvalidConfig(format!("unknown fusion rule `{other}`"))),
        }
    }
}

impl FusionRule {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionRule::Raw => "raw",
            FusionRule::Rank => "rank",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub target_index: usize,
    pub target: FeatureVector,
    /// Criterion A: cosine between difference vectors, lower is more reverse.
    pub diff_scores: Vec<f64>,
    /// Criterion B: gap in prototype similarity, lower is a closer match.
    pub gap_scores: Vec<f64>,
    pub fused: Vec<f64>,
}

pub fn criterion_a_scores(
    input: &UnitVector,
    pool: &[UnitVector],
    proto: &UnitVector,
) -> Result<Vec<f64>> {
    if pool.is_empty() {
        return Err(Error::EmptyPool("selection candidates"));
    }
    let d_in = geometry::difference_vector(input, proto)?;
    pool.iter()
        .map(|cand| {
            let d_c = geometry::difference_vector(cand, proto)?;
            geometry::cosine_sim(&d_in, &d_c)
        })
        .collect()
}

pub fn criterion_b_scores(
    input: &UnitVector,
    pool: &[UnitVector],
    proto: &UnitVector,
) -> Result<Vec<f64>> {
    if pool.is_empty() {
        return Err(Error::EmptyPool("selection candidates"));
    }
    check_dim(proto.dim(), input.dim())?;
    let s_in = geometry::dot(input, proto);
    pool.iter()
        .map(|cand| {
            check_dim(proto.dim(), cand.dim())?;
            Ok((s_in - geometry::dot(cand, proto)).abs())
        })
        .collect()
}

/// Ascending rank position of each entry (0 for the smallest); ties keep index order.
fn rank_positions(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; scores.len()];
    for (pos, idx) in order.into_iter().enumerate() {
        ranks[idx] = pos as f64;
    }
    ranks
}

/// `p_A + p_B` per candidate.
pub fn fuse_scores(diff: &[f64], gap: &[f64], rule: FusionRule) -> Result<Vec<f64>> {
    check_dim(diff.len(), gap.len())?;
    let (pa, pb) = match rule {
        FusionRule::Raw => (geometry::softmax(diff)?, geometry::softmax(gap)?),
        FusionRule::Rank => (
            geometry::softmax(&rank_positions(diff))?,
            geometry::softmax(&rank_positions(gap))?,
        ),
    };
    Ok(pa.iter().zip(&pb).map(|(a, b)| a + b).collect())
}

/// The bank pool of one class in its prototype reference frame. Building it
/// once lets every input of the class share the normalization work.
#[derive(Debug, Clone)]
pub struct ClassFrame<'b> {
    class: ClassId,
    pool: Vec<&'b FeatureVector>,
    proto: UnitVector,
    diffs: Vec<Vec<f64>>,
    diff_norms: Vec<f64>,
    sims: Vec<f64>,
}

impl<'b> ClassFrame<'b> {
    pub fn new(bank: &'b MemoryBank, class: ClassId) -> Result<Self> {
        let pool = bank.class_pool(class);
        if pool.len() < 2 {
            return Err(Error::InsufficientPool {
                class,
                size: pool.len(),
                required: 2,
            });
        }
        let proto = bank.prototype(class)?.unit;
        let mut diffs = Vec::with_capacity(pool.len());
        let mut diff_norms = Vec::with_capacity(pool.len());
        let mut sims = Vec::with_capacity(pool.len());
        for v in &pool {
            let u = geometry::normalize(v)?;
            sims.push(geometry::dot(&u, &proto));
            let d = geometry::difference_vector(&u, &proto)?;
            diff_norms.push(geometry::norm(&d));
            diffs.push(d);
        }
        Ok(ClassFrame {
            class,
            pool,
            proto,
            diffs,
            diff_norms,
            sims,
        })
    }

    pub fn class(&self) -> ClassId {
        self.class
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    pub fn select(&self, input: &FeatureVector, rule: FusionRule) -> Result<SelectionResult> {
        check_dim(self.proto.dim(), input.dim())?;
        let x_hat = geometry::normalize(input)?;
        let d_in = geometry::difference_vector(&x_hat, &self.proto)?;
        let n_in = geometry::norm(&d_in);
        if !(n_in > geometry::NORM_EPS) {
            return Err(Error::ZeroVector);
        }
        let mut diff_scores = Vec::with_capacity(self.len());
        for (d, &n) in self.diffs.iter().zip(&self.diff_norms) {
            if !(n > geometry::NORM_EPS) {
                return Err(Error::ZeroVector);
            }
            diff_scores.push((geometry::dot(&d_in, d) / (n_in * n)).clamp(-1.0, 1.0));
        }
        let s_in = geometry::dot(&x_hat, &self.proto);
        let gap_scores: Vec<f64> = self.sims.iter().map(|s| (s_in - s).abs()).collect();
        let fused = fuse_scores(&diff_scores, &gap_scores, rule)?;
        let target_index = geometry::argmin(&fused).ok_or(Error::EmptyInput)?;
        Ok(SelectionResult {
            target_index,
            target: self.pool[target_index].clone(),
            diff_scores,
            gap_scores,
            fused,
        })
    }
}

/// Selects the local reverse sample for `input` from the bank pool of `class`.
pub fn select_lrsample(
    input: &FeatureVector,
    class: ClassId,
    bank: &MemoryBank,
    rule: FusionRule,
) -> Result<SelectionResult> {
    check_dim(bank.dim(), input.dim())?;
    ClassFrame::new(bank, class)?.select(input, rule)
}
