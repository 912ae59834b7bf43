//! Feature sources for experiments: synthetic class Gaussians, or rows
//! ingested from a feature file.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{self, FeatureVector};
use crate::harness::config::ExperimentConfig;
use crate::io::feature_file::FeatureFile;
use crate::memory_bank::{ClassId, Partition};
use crate::rng::{self, SeedStreams};

const MAX_WORLD_ATTEMPTS: usize = 1000;

/// Base classes take ids `0..B`, novel classes `B..B+N`. Each novel mean sits
/// at distance `delta` from its assigned similar base mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub dim: usize,
    pub num_base: usize,
    pub num_novel: usize,
    pub means: Vec<FeatureVector>,
    pub sigma2: Vec<Vec<f64>>,
    pub similar: BTreeMap<ClassId, ClassId>,
    pub seed: u64,
}

/// Per-class rows split in file order: the first 80% feed training draws, the
/// rest evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalWorld {
    pub dim: usize,
    pub num_base: usize,
    pub num_novel: usize,
    pub train: Vec<Vec<FeatureVector>>,
    pub test: Vec<Vec<FeatureVector>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum World {
    Synthetic(SyntheticWorld),
    Empirical(EmpiricalWorld),
}

fn gaussian_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Draws a synthetic world from the `world` stream of `seed`.
pub fn generate_world(config: &ExperimentConfig, seed: u64) -> Result<SyntheticWorld> {
    config.validate()?;
    let wc = &config.world;
    let dim = wc.dim;
    let (nb, nn) = (wc.base_classes, wc.novel_classes);
    let mut rng = SeedStreams::new(seed).stream(rng::WORLD);

    for _ in 0..MAX_WORLD_ATTEMPTS {
        let base_means: Vec<Vec<f64>> = (0..nb).map(|_| gaussian_vec(&mut rng, dim, wc.mean_scale)).collect();
        let assigned: Vec<usize> = if nn <= nb {
            index::sample(&mut rng, nb, nn).into_vec()
        } else {
            (0..nn).map(|_| rng.random_range(0..nb)).collect()
        };
        let mut novel_means = Vec::with_capacity(nn);
        for &b in &assigned {
            let dir = loop {
                let v = gaussian_vec(&mut rng, dim, 1.0);
                if let Ok(u) = geometry::normalize(&v) {
                    break u;
                }
            };
            let m: Vec<f64> = base_means[b].iter().zip(dir.iter()).map(|(x, u)| x + wc.delta * u).collect();
            novel_means.push(m);
        }
        let sigma2: Vec<Vec<f64>> = (0..nb + nn)
            .map(|_| {
                (0..dim)
                    .map(|_| wc.spread * wc.spread * rng.random_range(0.5..1.5))
                    .collect()
            })
            .collect();

        let confusable = novel_means.iter().zip(&assigned).all(|(m, &b)| {
            let own = geometry::euclidean(m, &base_means[b]).unwrap_or(f64::INFINITY);
            base_means
                .iter()
                .enumerate()
                .all(|(j, other)| j == b || own < geometry::euclidean(m, other).unwrap_or(0.0))
        });
        if !confusable {
            continue;
        }
        let means = base_means
            .into_iter()
            .chain(novel_means)
            .map(FeatureVector::new)
            .collect::<Result<Vec<_>>>()?;
        let similar = assigned
            .iter()
            .enumerate()
            .map(|(i, &b)| (ClassId((nb + i) as u32), ClassId(b as u32)))
            .collect();
        return Ok(SyntheticWorld {
            dim,
            num_base: nb,
            num_novel: nn,
            means,
            sigma2,
            similar,
            seed,
        });
    }
    Err(Error::InvalidConfig(format!(
        "could not draw base means separated enough for delta = {} after {MAX_WORLD_ATTEMPTS} attempts",
        wc.delta
    )))
}

impl SyntheticWorld {
    pub fn sample<R: Rng>(&self, class: ClassId, rng: &mut R) -> FeatureVector {
        let c = class.index();
        let v = self.means[c]
            .iter()
            .zip(&self.sigma2[c])
            .map(|(m, s2)| {
                let z: f64 = StandardNormal.sample(rng);
                m + s2.sqrt() * z
            })
            .collect();
        FeatureVector::from_raw(v)
    }

    /// `samples_per_class` rows per class, base classes first.
    pub fn to_feature_file<R: Rng>(&self, samples_per_class: usize, rng: &mut R) -> FeatureFile {
        let mut rows = Vec::with_capacity(samples_per_class * (self.num_base + self.num_novel));
        for c in 0..self.num_base + self.num_novel {
            let class = ClassId(c as u32);
            let partition = if c < self.num_base { Partition::Base } else { Partition::Novel };
            for _ in 0..samples_per_class {
                rows.push((class, partition, self.sample(class, rng)));
            }
        }
        FeatureFile {
            dim: self.dim,
            num_classes: self.num_base + self.num_novel,
            rows,
        }
    }
}

impl EmpiricalWorld {
    /// Requires base classes to take ids `0..B` and novel classes `B..C`.
    pub fn from_feature_file(file: &FeatureFile) -> Result<Self> {
        let c = file.num_classes;
        let mut partitions: Vec<Option<Partition>> = vec![None; c];
        let mut rows: Vec<Vec<FeatureVector>> = vec![Vec::new(); c];
        for (class, partition, v) in &file.rows {
            let slot = &mut partitions[class.index()];
            match slot {
                Some(p) if p != partition => {
                    return Err(Error::InvalidConfig(format!(
                        "class {class} appears in both partitions"
                    )))
                }
                _ => *slot = Some(*partition),
            }
            rows[class.index()].push(v.clone());
        }
        let parts = partitions
            .iter()
            .enumerate()
            .map(|(i, p)| p.ok_or_else(|| Error::InvalidConfig(format!("class {i} has no rows"))))
            .collect::<Result<Vec<_>>>()?;
        let num_base = parts.iter().take_while(|p| **p == Partition::Base).count();
        if parts[num_base..].iter().any(|p| *p != Partition::Novel) {
            return Err(Error::InvalidConfig(
                "feature file must list base class ids before novel class ids".into(),
            ));
        }
        if num_base == 0 || num_base == c {
            return Err(Error::InvalidConfig("feature file needs both base and novel classes".into()));
        }
        let mut train = Vec::with_capacity(c);
        let mut test = Vec::with_capacity(c);
        for r in rows {
            let cut = ((r.len() * 4) / 5).max(1);
            let (a, b) = r.split_at(cut.min(r.len()));
            train.push(a.to_vec());
            test.push(if b.is_empty() { a.to_vec() } else { b.to_vec() });
        }
        Ok(EmpiricalWorld {
            dim: file.dim,
            num_base,
            num_novel: c - num_base,
            train,
            test,
        })
    }
}

impl World {
    pub fn dim(&self) -> usize {
        match self {
            World::Synthetic(w) => w.dim,
            World::Empirical(w) => w.dim,
        }
    }

    pub fn num_base(&self) -> usize {
        match self {
            World::Synthetic(w) => w.num_base,
            World::Empirical(w) => w.num_base,
        }
    }

    pub fn num_novel(&self) -> usize {
        match self {
            World::Synthetic(w) => w.num_novel,
            World::Empirical(w) => w.num_novel,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_base() + self.num_novel()
    }

    pub fn base_classes(&self) -> Vec<ClassId> {
        (0..self.num_base()).map(|c| ClassId(c as u32)).collect()
    }

    pub fn novel_classes(&self) -> Vec<ClassId> {
        (self.num_base()..self.num_classes()).map(|c| ClassId(c as u32)).collect()
    }

    pub fn partition(&self, class: ClassId) -> Partition {
        if class.index() < self.num_base() {
            Partition::Base
        } else {
            Partition::Novel
        }
    }

    pub fn sample_train<R: Rng>(&self, class: ClassId, rng: &mut R) -> FeatureVector {
        match self {
            World::Synthetic(w) => w.sample(class, rng),
            World::Empirical(w) => {
                let pool = &w.train[class.index()];
                pool[rng.random_range(0..pool.len())].clone()
            }
        }
    }

    pub fn sample_test<R: Rng>(&self, class: ClassId, rng: &mut R) -> FeatureVector {
        match self {
            World::Synthetic(w) => w.sample(class, rng),
            World::Empirical(w) => {
                let pool = &w.test[class.index()];
                pool[rng.random_range(0..pool.len())].clone()
            }
        }
    }
}
