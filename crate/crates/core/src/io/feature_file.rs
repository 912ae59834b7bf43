//! `LRC1` feature file.
//!
//! ```text
//! magic      4 bytes  "LRC1"
//! dim        u32 LE
//! rows       u32 LE
//! classes    u32 LE
//! rows x {
//!   class id   u32 LE   (< classes)
//!   partition  u8       (0 = base, 1 = novel)
//!   values     dim x f64 LE
//! }
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::FeatureVector;
use crate::io::binary::Reader;
use crate::memory_bank::{ClassId, Partition};

pub const MAGIC: &[u8; 4] = b"LRC1";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub dim: usize,
    pub num_classes: usize,
    pub rows: Vec<(ClassId, Partition, FeatureVector)>,
}

impl FeatureFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.rows.len() * (5 + 8 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.rows.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_classes as u32).to_le_bytes());
        for (class, partition, v) in &self.rows {
            out.extend_from_slice(&class.0.to_le_bytes());
            out.push(partition.flag());
            for x in v.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Parse("feature file: bad magic".into()));
        }
        let dim = r.u32()? as usize;
        let n = r.u32()? as usize;
        let num_classes = r.u32()? as usize;
        let expected = n
            .checked_mul(5 + 8 * dim)
            .ok_or_else(|| Error::Parse("feature file: size overflow".into()))?;
        if r.remaining() != expected {
            return Err(Error::Parse(format!(
                "feature file: header declares {n} rows of dim {dim} ({expected} bytes), body has {}",
                r.remaining()
            )));
        }
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let class = r.u32()?;
            if class as usize >= num_classes {
                return Err(Error::Parse(format!("feature file: row {i} class {class} >= {num_classes}")));
            }
            let flag = r.u8()?;
            let partition = Partition::from_flag(flag)
                .ok_or_else(|| Error::Parse(format!("feature file: row {i} bad partition flag {flag}")))?;
            let values = r.f64s(dim)?;
            let v = FeatureVector::new(values).map_err(|e| Error::Parse(format!("feature file: row {i}: {e}")))?;
            rows.push((ClassId(class), partition, v));
        }
        Ok(FeatureFile { dim, num_classes, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
