//! Center calibration and variance augmentation for novel classes.
//!
//! Converter-generated reverse samples are pushed into the bank to move the
//! novel prototype, then augmented features are drawn from a diagonal
//! Gaussian centered on the calibrated prototype, with the variance averaged
//! over the nearest base classes.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classifier;
use crate::error::{check_dim, Error, Result};
use crate::geometry::{self, FeatureVector};
use crate::ifc::{self, IfcModel};
use crate::memory_bank::{ClassId, MemoryBank};

/// Mean and diagonal variance of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub mean: FeatureVector,
    pub sigma2: Vec<f64>,
}

pub type BaseStats = BTreeMap<ClassId, ClassStats>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub class: ClassId,
    pub mu: FeatureVector,
    pub sigma2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub class: ClassId,
    pub center_before: FeatureVector,
    pub center_after: FeatureVector,
    pub dist_to_similar_before: f64,
    pub dist_to_similar_after: f64,
    pub similar_base: ClassId,
}

/// Per-class mean and (population) variance of bank contents.
pub fn bank_stats(bank: &MemoryBank, classes: &[ClassId]) -> Result<BaseStats> {
    let dim = bank.dim();
    let mut out = BTreeMap::new();
    for &class in classes {
        let pool = bank.class_pool(class);
        let mean = geometry::mean_of(pool.iter().map(|v| v.as_slice()), dim)
            .ok_or(Error::EmptyClass(class))?;
        let n = pool.len() as f64;
        let mut sigma2 = vec![0.0; dim];
        for v in &pool {
            for j in 0..dim {
                let d = v[j] - mean[j];
                sigma2[j] += d * d;
            }
        }
        sigma2.iter_mut().for_each(|s| *s /= n);
        out.insert(
            class,
            ClassStats {
                mean: FeatureVector::from_raw(mean),
                sigma2,
            },
        );
    }
    Ok(out)
}

/// Base class whose bank prototype is nearest (normalized Euclidean) to `center`.
/// Ties go to the lowest class id.
fn nearest_base(bank: &MemoryBank, center: &[f64], base_classes: &[ClassId]) -> Result<(ClassId, f64)> {
    let mut best: Option<(ClassId, f64)> = None;
    let mut sorted = base_classes.to_vec();
    sorted.sort();
    for c in sorted {
        let proto = bank.prototype(c)?;
        let d = geometry::normalized_euclidean(center, &proto.mean)?;
        if best.map_or(true, |(_, b)| d < b) {
            best = Some((c, d));
        }
    }
    best.ok_or(Error::InsufficientBaseClasses {
        required: 1,
        available: 0,
    })
}

/// Generates `count` cascaded reverse samples per shot and inserts them under
/// `class` (`count = 0` inserts nothing). The shots are expected to be in the
/// bank already; the report compares the class prototype before and after
/// insertion against the base prototype nearest to the calibrated center.
pub fn calibrate_center(
    bank: &mut MemoryBank,
    model: &IfcModel,
    class: ClassId,
    shots: &[FeatureVector],
    count: usize,
    base_classes: &[ClassId],
) -> Result<CalibrationReport> {
    if shots.is_empty() {
        return Err(Error::EmptyInput);
    }
    if base_classes.contains(&class) {
        return Err(Error::InvalidConfig(format!("class {class} is a base class")));
    }
    let center_before = bank.prototype(class)?.mean;

    let mut generated = Vec::with_capacity(shots.len() * count);
    if count > 0 {
        for shot in shots {
            generated.extend(ifc::generate_lrsamples(model, shot, count)?);
        }
    }
    for g in generated {
        bank.insert(class, g)?;
    }
    let center_after = bank.prototype(class)?.mean;

    let (similar_base, dist_after) = nearest_base(bank, &center_after, base_classes)?;
    let base_proto = bank.prototype(similar_base)?;
    let dist_before = geometry::normalized_euclidean(&center_before, &base_proto.mean)?;
    Ok(CalibrationReport {
        class,
        center_before,
        center_after,
        dist_to_similar_before: dist_before,
        dist_to_similar_after: dist_after,
        similar_base,
    })
}

/// Nearest `k` base classes to `calibrated_mu` (normalized Euclidean, ties by
/// class id), with their variances averaged.
pub fn variance_transfer(
    novel: ClassId,
    base_stats: &BaseStats,
    calibrated_mu: &FeatureVector,
    k: usize,
) -> Result<GaussianSpec> {
    if k == 0 || base_stats.len() < k {
        return Err(Error::InsufficientBaseClasses {
            required: k.max(1),
            available: base_stats.len(),
        });
    }
    let mut ranked = Vec::with_capacity(base_stats.len());
    for (class, stats) in base_stats {
        check_dim(calibrated_mu.dim(), stats.mean.dim())?;
        check_dim(calibrated_mu.dim(), stats.sigma2.len())?;
        ranked.push((geometry::normalized_euclidean(calibrated_mu, &stats.mean)?, *class));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut sigma2 = vec![0.0; calibrated_mu.dim()];
    for (_, class) in &ranked[..k] {
        for (s, v) in sigma2.iter_mut().zip(&base_stats[class].sigma2) {
            *s += v;
        }
    }
    sigma2.iter_mut().for_each(|s| *s /= k as f64);
    Ok(GaussianSpec {
        class: novel,
        mu: calibrated_mu.clone(),
        sigma2,
    })
}

/// The base classes `variance_transfer` would pick, nearest first.
pub fn nearest_base_classes(base_stats: &BaseStats, mu: &[f64], k: usize) -> Result<Vec<ClassId>> {
    let mut ranked = Vec::with_capacity(base_stats.len());
    for (class, stats) in base_stats {
        ranked.push((geometry::normalized_euclidean(mu, &stats.mean)?, *class));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(ranked.into_iter().take(k).map(|(_, c)| c).collect())
}

pub fn sample_augmented_with<R: rand::Rng>(spec: &GaussianSpec, n: usize, rng: &mut R) -> Vec<FeatureVector> {
    let sd: Vec<f64> = spec.sigma2.iter().map(|s| s.max(0.0).sqrt()).collect();
    (0..n)
        .map(|_| {
            let v = spec
                .mu
                .iter()
                .zip(&sd)
                .map(|(m, s)| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + s * z
                })
                .collect();
            FeatureVector::from_raw(v)
        })
        .collect()
}

/// `n` independent draws from `N(mu, diag(sigma2))`, deterministic per seed.
pub fn sample_augmented(spec: &GaussianSpec, n: usize, seed: u64) -> Vec<FeatureVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_augmented_with(spec, n, &mut rng)
}

/// Mean cross-entropy of augmented-sample logits against the fixed label.
pub fn loss_aug(logits_of_augmented: &[Vec<f64>], class: ClassId) -> Result<f64> {
    let labels = vec![class; logits_of_augmented.len()];
    classifier::mean_cross_entropy(logits_of_augmented, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    fn identity_model(dim: usize) -> IfcModel {
        let mut id = vec![0.0; dim * dim];
        for i in 0..dim {
            id[i * dim + i] = 1.0;
        }
        IfcModel::from_parts(dim, dim, id.clone(), vec![0.0; dim], id, vec![0.0; dim]).unwrap()
    }

    fn bank_with_bases() -> MemoryBank {
        let mut bank = MemoryBank::new(2, 100).unwrap();
        bank.insert(ClassId(0), fv(&[1.0, 0.1])).unwrap();
        bank.insert(ClassId(0), fv(&[1.0, -0.1])).unwrap();
        bank.insert(ClassId(1), fv(&[0.1, 1.0])).unwrap();
        bank.insert(ClassId(1), fv(&[-0.1, 1.0])).unwrap();
        bank
    }

    #[test]
    fn identity_converter_leaves_center() {
        let mut bank = bank_with_bases();
        let shot = fv(&[2.0, 1.0]);
        bank.insert(ClassId(5), shot.clone()).unwrap();
        let r = calibrate_center(&mut bank, &identity_model(2), ClassId(5), &[shot], 2, &[ClassId(0), ClassId(1)]).unwrap();
        assert_eq!(r.center_before, r.center_after);
        assert_eq!(r.similar_base, ClassId(0));
        assert_eq!(r.dist_to_similar_after, r.dist_to_similar_before);
        assert_eq!(bank.class_len(ClassId(5)), 3);
    }

    #[test]
    fn single_generated_sample_gives_two_point_mean() {
        let mut bank = bank_with_bases();
        let shot = fv(&[2.0, 1.0]);
        bank.insert(ClassId(5), shot.clone()).unwrap();
        // f(x) = -x + (3, 5) via relu(x) on nonnegative inputs
        let model = IfcModel::from_parts(
            2,
            2,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0],
            vec![-1.0, 0.0, 0.0, -1.0],
            vec![3.0, 5.0],
        )
        .unwrap();
        let g = model.forward(&shot).unwrap();
        assert_eq!(g.as_slice(), &[1.0, 4.0]);
        let r = calibrate_center(&mut bank, &model, ClassId(5), &[shot.clone()], 1, &[ClassId(0), ClassId(1)]).unwrap();
        assert_eq!(r.center_after.as_slice(), &[1.5, 2.5]);
        assert_eq!(r.center_before, shot);
        let p1 = bank.prototype(ClassId(1)).unwrap();
        assert_eq!(r.similar_base, ClassId(1));
        assert_eq!(
            r.dist_to_similar_after,
            geometry::normalized_euclidean(&[1.5, 2.5], &p1.mean).unwrap()
        );
    }

    #[test]
    fn calibrate_rejects_base_class_and_empty_shots() {
        let mut bank = bank_with_bases();
        let m = identity_model(2);
        assert!(calibrate_center(&mut bank, &m, ClassId(0), &[fv(&[1.0, 0.0])], 1, &[ClassId(0)]).is_err());
        assert!(calibrate_center(&mut bank, &m, ClassId(4), &[], 1, &[ClassId(0)]).is_err());
    }

    fn stats(mean: &[f64], s2: &[f64]) -> ClassStats {
        ClassStats {
            mean: fv(mean),
            sigma2: s2.to_vec(),
        }
    }

    #[test]
    fn variance_transfer_examples() {
        let mut base = BaseStats::new();
        base.insert(ClassId(0), stats(&[1.0, 0.0], &[1.0, 1.0]));
        base.insert(ClassId(1), stats(&[0.9, 0.3], &[3.0, 3.0]));
        base.insert(ClassId(2), stats(&[-1.0, 0.2], &[10.0, 10.0]));
        let mu = fv(&[1.0, 0.1]);
        let g = variance_transfer(ClassId(7), &base, &mu, 1).unwrap();
        assert_eq!(g.sigma2, vec![1.0, 1.0]);
        let g = variance_transfer(ClassId(7), &base, &mu, 2).unwrap();
        assert_eq!(g.sigma2, vec![2.0, 2.0]);
        assert_eq!(g.mu, mu);
        assert!(matches!(
            variance_transfer(ClassId(7), &base, &mu, 4),
            Err(Error::InsufficientBaseClasses { .. })
        ));
    }

    #[test]
    fn variance_transfer_picks_nearest_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let mut base = BaseStats::new();
            for c in 0..10 {
                let m: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let s: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..2.0)).collect();
                base.insert(ClassId(c), stats(&m, &s));
            }
            let mu = fv(&(0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
            // full sort oracle
            let mut all: Vec<(f64, u32)> = base
                .iter()
                .map(|(c, s)| {
                    let a = geometry::normalize(&mu).unwrap();
                    let b = geometry::normalize(&s.mean).unwrap();
                    let d = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                    (d, c.0)
                })
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let want: Vec<ClassId> = all[..3].iter().map(|e| ClassId(e.1)).collect();
            assert_eq!(nearest_base_classes(&base, &mu, 3).unwrap(), want);
            let g = variance_transfer(ClassId(99), &base, &mu, 3).unwrap();
            for j in 0..4 {
                let avg = want.iter().map(|c| base[c].sigma2[j]).sum::<f64>() / 3.0;
                assert!((g.sigma2[j] - avg).abs() < 1e-12);
                let lo = want.iter().map(|c| base[c].sigma2[j]).fold(f64::INFINITY, f64::min);
                let hi = want.iter().map(|c| base[c].sigma2[j]).fold(f64::NEG_INFINITY, f64::max);
                assert!(lo <= g.sigma2[j] + 1e-15 && g.sigma2[j] <= hi + 1e-15);
            }
        }
    }

    #[test]
    fn zero_variance_samples_equal_mean() {
        let spec = GaussianSpec {
            class: ClassId(0),
            mu: fv(&[1.5, -2.0, 0.25]),
            sigma2: vec![0.0; 3],
        };
        for s in sample_augmented(&spec, 10, 3) {
            assert_eq!(s, spec.mu);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let spec = GaussianSpec {
            class: ClassId(0),
            mu: fv(&[0.0, 1.0]),
            sigma2: vec![1.0, 2.0],
        };
        assert_eq!(sample_augmented(&spec, 50, 17), sample_augmented(&spec, 50, 17));
        assert_ne!(sample_augmented(&spec, 50, 17), sample_augmented(&spec, 50, 18));
    }

    #[test]
    fn loss_aug_examples() {
        let mut strong = vec![vec![0.0; 3]; 4];
        strong.iter_mut().for_each(|r| r[2] = 1000.0);
        assert!(loss_aug(&strong, ClassId(2)).unwrap() < 1e-12);
        let uniform = vec![vec![0.0; 6]; 4];
        assert!((loss_aug(&uniform, ClassId(1)).unwrap() - 6f64.ln()).abs() < 1e-12);
        let rows: Vec<Vec<f64>> = vec![vec![0.5, 1.0, -1.0], vec![2.0, 0.0, 0.0]];
        let oracle = rows
            .iter()
            .map(|r| r.iter().map(|v| v.exp()).sum::<f64>().ln() - r[1])
            .sum::<f64>()
            / 2.0;
        assert!((loss_aug(&rows, ClassId(1)).unwrap() - oracle).abs() < 1e-12);
        assert!(loss_aug(&rows, ClassId(3)).is_err());
        assert!(loss_aug(&[], ClassId(0)).is_err());
    }

    #[test]
    fn bank_stats_are_population_moments() {
        let mut bank = MemoryBank::new(2, 10).unwrap();
        bank.insert(ClassId(0), fv(&[1.0, 2.0])).unwrap();
        bank.insert(ClassId(0), fv(&[3.0, 2.0])).unwrap();
        let s = bank_stats(&bank, &[ClassId(0)]).unwrap();
        assert_eq!(s[&ClassId(0)].mean.as_slice(), &[2.0, 2.0]);
        assert_eq!(s[&ClassId(0)].sigma2, vec![1.0, 0.0]);
    }
}
