//! Density-based boundary reweighting.
//!
//! Misclassified ("edge") samples are sorted into a high-importance set when
//! the most similar class is denser around them than their own class, and a
//! low-importance set otherwise. A reweighting function of the per-sample
//! loss then raises or lowers their contribution to the classification loss.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{self, FeatureVector, NORM_EPS};
use crate::memory_bank::{ClassId, Prototype};

pub const WEIGHT_MIN: f64 = 0.1;
pub const WEIGHT_MAX: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityParams {
    /// Own-class coverage fraction that defines the radius.
    pub d_in: f64,
    /// Radius multiplier for the similar class.
    pub eta: f64,
}

impl Default for DensityParams {
    fn default() -> Self {
        DensityParams { d_in: 0.3, eta: 1.5 }
    }
}

impl DensityParams {
    pub fn new(d_in: f64, eta: f64) -> Result<Self> {
        if !(d_in > 0.0 && d_in < 1.0) {
            return Err(Error::InvalidConfig(format!("density.d_in must be in (0, 1), got {d_in}")));
        }
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::InvalidConfig(format!("density.eta must be positive, got {eta}")));
        }
        Ok(DensityParams { d_in, eta })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    /// Similar class denser than own class.
    High,
    /// Own class denser than similar class.
    Low,
    /// Correctly classified, or exactly balanced densities.
    Central,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::High => "high",
            Region::Low => "low",
            Region::Central => "central",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GFamily {
    Linear,
    #[serde(rename = "exp")]
    Exponential,
    #[default]
    Sigmoid,
}

impl FromStr for GFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(GFamily::Linear),
            "exp" | "exponential" => Ok(GFamily::Exponential),
            "sigmoid" => Ok(GFamily::Sigmoid),
            other => Err(Error::InvalidConfig(format!("unknown reweighting family `{other}`"))),
        }
    }
}

impl GFamily {
    pub const ALL: [GFamily; 3] = [GFamily::Linear, GFamily::Exponential, GFamily::Sigmoid];

    pub fn as_str(self) -> &'static str {
        match self {
            GFamily::Linear => "linear",
            GFamily::Exponential => "exp",
            GFamily::Sigmoid => "sigmoid",
        }
    }

    /// Shape with `g(0) = 0`, non-decreasing for nonnegative losses.
    pub fn shape(self, loss: f64) -> f64 {
        match self {
            GFamily::Linear => loss,
            GFamily::Exponential => loss.exp_m1(),
            GFamily::Sigmoid => 2.0 * sigmoid(loss) - 1.0,
        }
    }

    pub fn shape_derivative(self, loss: f64) -> f64 {
        match self {
            GFamily::Linear => 1.0,
            GFamily::Exponential => loss.exp(),
            GFamily::Sigmoid => {
                let s = sigmoid(loss);
                2.0 * s * (1.0 - s)
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReweightFunction {
    pub family: GFamily,
    pub alpha: f64,
}

impl Default for ReweightFunction {
    fn default() -> Self {
        ReweightFunction {
            family: GFamily::Sigmoid,
            alpha: 0.5,
        }
    }
}

impl ReweightFunction {
    /// Unclamped weight for a loss in `region`.
    fn raw(&self, loss: f64, region: Region) -> f64 {
        let g = self.alpha * self.family.shape(loss);
        match region {
            Region::Central => 1.0,
            Region::High => 1.0 + g,
            Region::Low => 1.0 / (1.0 + g),
        }
    }

    pub fn weight(&self, loss: f64, region: Region) -> f64 {
        self.raw(loss, region).clamp(WEIGHT_MIN, WEIGHT_MAX)
    }

    /// Derivative of [`Self::weight`] in the loss; zero where clamped.
    pub fn weight_derivative(&self, loss: f64, region: Region) -> f64 {
        let raw = self.raw(loss, region);
        if raw <= WEIGHT_MIN || raw >= WEIGHT_MAX {
            return 0.0;
        }
        let dg = self.alpha * self.family.shape_derivative(loss);
        match region {
            Region::Central => 0.0,
            Region::High => dg,
            Region::Low => -dg * raw * raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceAssignment {
    pub sample_index: usize,
    pub region: Region,
    pub d_in_value: f64,
    pub d_sim_value: f64,
    pub similar_class: Option<ClassId>,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalDensity {
    pub d_in_value: f64,
    pub d_sim_value: f64,
    pub d_thred: f64,
}

/// Indices whose argmax logit (ties to the lowest class) differs from the label.
pub fn find_edge_samples(logits: &[Vec<f64>], labels: &[ClassId]) -> Result<Vec<usize>> {
    check_dim(logits.len(), labels.len())?;
    let mut edges = Vec::new();
    for (i, (row, label)) in logits.iter().zip(labels).enumerate() {
        if label.index() >= row.len() {
            return Err(Error::DimensionMismatch {
                expected: label.index() + 1,
                got: row.len(),
            });
        }
        if geometry::argmax(row) != Some(label.index()) {
            edges.push(i);
        }
    }
    Ok(edges)
}

/// Class other than `own` whose prototype mean is closest (Euclidean) to `x`.
pub fn similar_class(x: &[f64], prototypes: &BTreeMap<ClassId, Prototype>, own: ClassId) -> Result<ClassId> {
    if prototypes.len() < 2 {
        return Err(Error::InsufficientClasses(prototypes.len()));
    }
    let mut best: Option<(ClassId, f64)> = None;
    for (class, proto) in prototypes {
        if *class == own {
            continue;
        }
        let d = geometry::euclidean(x, &proto.mean)?;
        if best.map_or(true, |(_, b)| d < b) {
            best = Some((*class, d));
        }
    }
    best.map(|(c, _)| c).ok_or(Error::InsufficientClasses(1))
}

/// Radius at which the own class covers a `d_in` fraction of its pool around
/// `x_edge` (the smallest distance with at least that coverage, counting
/// members at distance `<=` radius), and the fraction of the similar-class
/// pool strictly inside `eta` times that radius.
pub fn local_densities(
    x_edge: &[f64],
    own_pool: &[&FeatureVector],
    sim_pool: &[&FeatureVector],
    params: DensityParams,
) -> Result<LocalDensity> {
    if own_pool.len() < 4 {
        return Err(Error::EmptyPool("own-class pool needs at least 4 members"));
    }
    if sim_pool.is_empty() {
        return Err(Error::EmptyPool("similar-class pool"));
    }
    let mut own_d = own_pool
        .iter()
        .map(|v| geometry::euclidean(x_edge, v))
        .collect::<Result<Vec<_>>>()?;
    own_d.sort_by(f64::total_cmp);
    let rank = coverage_rank(params.d_in, own_d.len());
    let d_thred = own_d[rank - 1];
    if !(d_thred > NORM_EPS) {
        return Err(Error::DegenerateRadius(d_thred));
    }
    let radius = params.eta * d_thred;
    let mut inside = 0usize;
    for v in sim_pool {
        if geometry::euclidean(x_edge, v)? < radius {
            inside += 1;
        }
    }
    Ok(LocalDensity {
        d_in_value: params.d_in,
        d_sim_value: inside as f64 / sim_pool.len() as f64,
        d_thred,
    })
}

/// Smallest count `m` with `m / n >= fraction`, at least 1.
pub fn coverage_rank(fraction: f64, n: usize) -> usize {
    let m = (fraction * n as f64).ceil() as usize;
    // guard against `0.3 * 10 = 3.0000000000000004`
    let m = if m > 1 && ((m - 1) as f64) >= fraction * n as f64 - 1e-9 { m - 1 } else { m };
    m.clamp(1, n)
}

pub fn classify_region(d_sim: f64, d_in: f64) -> Region {
    if d_sim > d_in {
        Region::High
    } else if d_sim < d_in {
        Region::Low
    } else {
        Region::Central
    }
}

pub fn assign_importance(losses: &[f64], regions: &[Region], f: &ReweightFunction) -> Result<Vec<f64>> {
    check_dim(losses.len(), regions.len())?;
    losses
        .iter()
        .zip(regions)
        .enumerate()
        .map(|(index, (&loss, &region))| {
            if loss < 0.0 || loss.is_nan() {
                return Err(Error::NegativeLoss { index, value: loss });
            }
            Ok(f.weight(loss, region))
        })
        .collect()
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::EmptyInput);
    }
    for (index, &w) in weights.iter().enumerate() {
        if !(w > 0.0) {
            return Err(Error::NonpositiveWeight { index, value: w });
        }
    }
    Ok(())
}

/// Weight dispersion `(1/n) Σ |v_i - mean(v)| / |v_i|`.
pub fn loss_edge(weights: &[f64]) -> Result<f64> {
    check_weights(weights)?;
    // the summed mean of equal weights can miss them by an ulp
    if weights.iter().all(|&v| v == weights[0]) {
        return Ok(0.0);
    }
    let n = weights.len() as f64;
    let mean = weights.iter().sum::<f64>() / n;
    Ok(weights.iter().map(|v| (v - mean).abs() / v.abs()).sum::<f64>() / n)
}

/// Gradient of [`loss_edge`] with respect to each weight.
pub fn loss_edge_gradient(weights: &[f64]) -> Result<Vec<f64>> {
    check_weights(weights)?;
    let n = weights.len() as f64;
    let mean = weights.iter().sum::<f64>() / n;
    // through the mean: -(1/n) Σ_i sgn(v_i - m) / v_i, shared by every j
    let shared: f64 = -weights.iter().map(|v| sign(v - mean) / v).sum::<f64>() / n;
    Ok(weights
        .iter()
        .map(|v| {
            let s = sign(v - mean);
            let direct = (s * v - (v - mean).abs()) / (v * v);
            (direct + shared) / n
        })
        .collect())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `(1/n) Σ v_i * CE_i` with the weights treated as constants.
pub fn loss_cls_weighted(losses: &[f64], weights: &[f64]) -> Result<f64> {
    check_dim(losses.len(), weights.len())?;
    if losses.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(losses.iter().zip(weights).map(|(l, v)| l * v).sum::<f64>() / losses.len() as f64)
}

/// Assigns regions and weights to a batch.
///
/// Correctly classified samples are central. Edge samples whose own or
/// similar pool cannot support a density estimate are central as well.
pub fn assign_batch<'a, F>(
    features: &[FeatureVector],
    labels: &[ClassId],
    logits: &[Vec<f64>],
    losses: &[f64],
    prototypes: &BTreeMap<ClassId, Prototype>,
    pool_of: F,
    params: DensityParams,
    reweight: &ReweightFunction,
) -> Result<Vec<ImportanceAssignment>>
where
    F: Fn(ClassId) -> Vec<&'a FeatureVector>,
{
    check_dim(features.len(), labels.len())?;
    check_dim(features.len(), losses.len())?;
    let edges = find_edge_samples(logits, labels)?;
    let mut out: Vec<ImportanceAssignment> = (0..features.len())
        .map(|i| ImportanceAssignment {
            sample_index: i,
            region: Region::Central,
            d_in_value: params.d_in,
            d_sim_value: f64::NAN,
            similar_class: None,
            weight: 1.0,
        })
        .collect();
    for i in edges {
        let own = labels[i];
        let sim = similar_class(&features[i], prototypes, own)?;
        let own_pool = pool_of(own);
        let sim_pool = pool_of(sim);
        let density = match local_densities(&features[i], &own_pool, &sim_pool, params) {
            Ok(d) => d,
            Err(Error::EmptyPool(_)) | Err(Error::DegenerateRadius(_)) => {
                out[i].similar_class = Some(sim);
                continue;
            }
            Err(e) => return Err(e),
        };
        let region = classify_region(density.d_sim_value, density.d_in_value);
        out[i] = ImportanceAssignment {
            sample_index: i,
            region,
            d_in_value: density.d_in_value,
            d_sim_value: density.d_sim_value,
            similar_class: Some(sim),
            weight: 1.0,
        };
    }
    let regions: Vec<Region> = out.iter().map(|a| a.region).collect();
    let weights = assign_importance(losses, &regions, reweight)?;
    for (a, w) in out.iter_mut().zip(weights) {
        a.weight = w;
    }
    Ok(out)
}
