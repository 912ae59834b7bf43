//! Bounded per-class FIFO storage of raw feature vectors.
//!
//! The capacity is one global budget shared by all classes. When an insert
//! would exceed it, the inserting class gives up its own oldest entry; a class
//! with nothing stored evicts the globally oldest entry instead.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{self, FeatureVector, UnitVector};

pub const DEFAULT_CAPACITY: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClassId(pub u32);

impl ClassId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Base,
    Novel,
}

impl Partition {
    pub fn flag(self) -> u8 {
        match self {
            Partition::Base => 0,
            Partition::Novel => 1,
        }
    }

    pub fn from_flag(flag: u8) -> Option<Self> {
        match flag {
            0 => Some(Partition::Base),
            1 => Some(Partition::Novel),
            _ => None,
        }
    }
}

/// Class mean and its normalized view.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub class: ClassId,
    pub mean: FeatureVector,
    pub unit: UnitVector,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Entry {
    pub(crate) seq: u64,
    pub(crate) feature: FeatureVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    dim: usize,
    capacity: usize,
    len: usize,
    next_seq: u64,
    queues: BTreeMap<ClassId, VecDeque<Entry>>,
}

impl MemoryBank {
    pub fn new(dim: usize, capacity: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::DimensionTooSmall(dim));
        }
        if capacity == 0 {
            return Err(Error::InvalidConfig("memory bank capacity must be positive".into()));
        }
        Ok(MemoryBank {
            dim,
            capacity,
            len: 0,
            next_seq: 0,
            queues: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Classes with at least one stored feature, ascending.
    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.queues
            .iter()
            .filter(|(_, q)| !q.is_empty())
            .map(|(c, _)| *c)
    }

    pub fn class_len(&self, class: ClassId) -> usize {
        self.queues.get(&class).map_or(0, VecDeque::len)
    }

    pub fn insert(&mut self, class: ClassId, feature: FeatureVector) -> Result<()> {
        check_dim(self.dim, feature.dim())?;
        if self.len == self.capacity {
            self.evict_for(class);
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queues
            .entry(class)
            .or_default()
            .push_back(Entry { seq, feature });
        self.len += 1;
        Ok(())
    }

    fn evict_for(&mut self, class: ClassId) {
        let own = self.queues.get_mut(&class).filter(|q| !q.is_empty());
        if let Some(queue) = own {
            queue.pop_front();
        } else {
            let oldest = self
                .queues
                .iter()
                .filter_map(|(c, q)| q.front().map(|e| (e.seq, *c)))
                .min();
            if let Some((_, victim)) = oldest {
                if let Some(q) = self.queues.get_mut(&victim) {
                    q.pop_front();
                }
            }
        }
        self.len -= 1;
    }

    /// Stored features of `class`, oldest first. Empty if the class is absent.
    pub fn class_pool(&self, class: ClassId) -> Vec<&FeatureVector> {
        self.queues
            .get(&class)
            .map(|q| q.iter().map(|e| &e.feature).collect())
            .unwrap_or_default()
    }

    pub fn prototype(&self, class: ClassId) -> Result<Prototype> {
        let pool = self.class_pool(class);
        let mean = geometry::mean_of(pool.iter().map(|v| v.as_slice()), self.dim)
            .ok_or(Error::EmptyClass(class))?;
        let unit = geometry::normalize(&mean)?;
        Ok(Prototype {
            class,
            mean: FeatureVector::from_raw(mean),
            unit,
        })
    }

    /// Prototypes of every non-empty class.
    pub fn prototypes(&self) -> Result<BTreeMap<ClassId, Prototype>> {
        self.classes()
            .map(|c| self.prototype(c).map(|p| (c, p)))
            .collect()
    }

    /// Drops the oldest entries of every class until each holds at most
    /// `per_class` features.
    pub fn retain_recent(&mut self, per_class: usize) {
        for queue in self.queues.values_mut() {
            while queue.len() > per_class {
                queue.pop_front();
                self.len -= 1;
            }
        }
    }

    pub(crate) fn entries(&self) -> impl Iterator<Item = (ClassId, &Entry)> + '_ {
        self.queues
            .iter()
            .flat_map(|(c, q)| q.iter().map(move |e| (*c, e)))
    }

    pub(crate) fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Rebuilds a bank from serialized parts. Entries of each class must be in
    /// ascending sequence order.
    pub(crate) fn from_parts(
        dim: usize,
        capacity: usize,
        next_seq: u64,
        queues: BTreeMap<ClassId, VecDeque<Entry>>,
    ) -> Result<Self> {
        let mut bank = MemoryBank::new(dim, capacity)?;
        for (class, queue) in &queues {
            for e in queue {
                check_dim(dim, e.feature.dim())?;
                if e.seq >= next_seq {
                    return Err(Error::Parse(format!(
                        "bank entry of class {class} has sequence {} beyond counter {next_seq}",
                        e.seq
                    )));
                }
            }
            if queue.iter().zip(queue.iter().skip(1)).any(|(a, b)| a.seq >= b.seq) {
                return Err(Error::Parse(format!("bank class {class} is not in insertion order")));
            }
        }
        let len = queues.values().map(VecDeque::len).sum();
        if len > capacity {
            return Err(Error::Parse(format!("bank holds {len} entries over capacity {capacity}")));
        }
        bank.len = len;
        bank.next_seq = next_seq;
        bank.queues = queues;
        Ok(bank)
    }
}
