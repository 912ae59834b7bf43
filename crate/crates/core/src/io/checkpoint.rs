//! Base-training checkpoints.
//!
//! One directory per seed holding four little-endian binary blobs and a JSON
//! metadata file:
//!
//! ```text
//! ifc.bin    u32 d, u32 h, w1 (h x d), b1 (h), w2 (d x h), b2 (d)         f64 LE
//! head.bin   u32 classes, u32 d, weights (classes x d), bias (classes)    f64 LE
//! bank.bin   u32 d, u64 capacity, u64 next_seq, u32 K,
//!            K x (u32 class id, u32 count),
//!            per class in header order: count x d f64 rows, then count x u64 sequence numbers
//! stats.bin  u32 d, u32 K, K x (u32 class id, d f64 mean, d f64 sigma2)
//! meta.json  seed, dimensions, class counts, config hash
//! curves.json  base-stage loss curves
//! ```

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ccva::{BaseStats, ClassStats};
use crate::classifier::ClassifierHead;
use crate::error::{Error, Result};
use crate::geometry::FeatureVector;
use crate::harness::train::BaseArtifacts;
use crate::ifc::IfcModel;
use crate::io::binary::{put_f64s, put_u32, put_u64, Reader};
use crate::memory_bank::{ClassId, Entry, MemoryBank};

pub fn encode_ifc(m: &IfcModel) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, m.dim());
    put_u32(&mut out, m.hidden());
    for block in [&m.w1, &m.b1, &m.w2, &m.b2] {
        put_f64s(&mut out, block);
    }
    out
}

pub fn decode_ifc(bytes: &[u8]) -> Result<IfcModel> {
    let mut r = Reader::new(bytes);
    let d = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w1 = r.f64s(h * d)?;
    let b1 = r.f64s(h)?;
    let w2 = r.f64s(d * h)?;
    let b2 = r.f64s(d)?;
    r.finish()?;
    IfcModel::from_parts(d, h, w1, b1, w2, b2)
}

pub fn encode_head(head: &ClassifierHead) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, head.num_classes());
    put_u32(&mut out, head.dim());
    put_f64s(&mut out, &head.weights);
    put_f64s(&mut out, &head.bias);
    out
}

pub fn decode_head(bytes: &[u8]) -> Result<ClassifierHead> {
    let mut r = Reader::new(bytes);
    let c = r.u32()? as usize;
    let d = r.u32()? as usize;
    let w = r.f64s(c * d)?;
    let b = r.f64s(c)?;
    r.finish()?;
    ClassifierHead::from_parts(c, d, w, b)
}

pub fn encode_bank(bank: &MemoryBank) -> Vec<u8> {
    let mut per_class: BTreeMap<ClassId, Vec<&Entry>> = BTreeMap::new();
    for (c, e) in bank.entries() {
        per_class.entry(c).or_default().push(e);
    }
    let mut out = Vec::new();
    put_u32(&mut out, bank.dim());
    put_u64(&mut out, bank.capacity() as u64);
    put_u64(&mut out, bank.next_seq());
    put_u32(&mut out, per_class.len());
    for (c, entries) in &per_class {
        put_u32(&mut out, c.index());
        put_u32(&mut out, entries.len());
    }
    for entries in per_class.values() {
        for e in entries {
            put_f64s(&mut out, &e.feature);
        }
        for e in entries {
            put_u64(&mut out, e.seq);
        }
    }
    out
}

pub fn decode_bank(bytes: &[u8]) -> Result<MemoryBank> {
    let mut r = Reader::new(bytes);
    let d = r.u32()? as usize;
    let capacity = r.u64()? as usize;
    let next_seq = r.u64()?;
    let k = r.u32()? as usize;
    let mut header = Vec::with_capacity(k);
    for _ in 0..k {
        header.push((ClassId(r.u32()?), r.u32()? as usize));
    }
    let mut queues = BTreeMap::new();
    for (class, count) in header {
        let mut rows = Vec::with_capacity(count);
        for _ in 0..count {
            rows.push(FeatureVector::new(r.f64s(d)?)?);
        }
        let mut queue = VecDeque::with_capacity(count);
        for feature in rows {
            queue.push_back(Entry { seq: r.u64()?, feature });
        }
        if queues.insert(class, queue).is_some() {
            return Err(Error::Parse(format!("bank: class {class} listed twice")));
        }
    }
    r.finish()?;
    MemoryBank::from_parts(d, capacity, next_seq, queues)
}

pub fn encode_stats(dim: usize, stats: &BaseStats) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, dim);
    put_u32(&mut out, stats.len());
    for (c, s) in stats {
        put_u32(&mut out, c.index());
        put_f64s(&mut out, &s.mean);
        put_f64s(&mut out, &s.sigma2);
    }
    out
}

pub fn decode_stats(bytes: &[u8]) -> Result<BaseStats> {
    let mut r = Reader::new(bytes);
    let d = r.u32()? as usize;
    let k = r.u32()? as usize;
    let mut out = BTreeMap::new();
    for _ in 0..k {
        let c = ClassId(r.u32()?);
        let mean = FeatureVector::new(r.f64s(d)?)?;
        let sigma2 = r.f64s(d)?;
        if sigma2.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Parse(format!("stats: negative variance for class {c}")));
        }
        out.insert(c, ClassStats { mean, sigma2 });
    }
    r.finish()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub dim: usize,
    pub num_base: usize,
    pub num_novel: usize,
    pub config_hash: String,
    pub features: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Curves {
    cls: Vec<f64>,
    ifc: Vec<f64>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save(dir: &Path, artifacts: &BaseArtifacts, meta: &CheckpointMeta) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("ifc.bin"), &encode_ifc(&artifacts.ifc))?;
    write(&dir.join("head.bin"), &encode_head(&artifacts.head))?;
    write(&dir.join("bank.bin"), &encode_bank(&artifacts.bank))?;
    write(&dir.join("stats.bin"), &encode_stats(artifacts.bank.dim(), &artifacts.base_stats))?;
    let curves = Curves {
        cls: artifacts.cls_curve.clone(),
        ifc: artifacts.ifc_curve.clone(),
    };
    let json = serde_json::to_string(&curves).map_err(|e| Error::Parse(e.to_string()))?;
    write(&dir.join("curves.json"), json.as_bytes())?;
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::Parse(e.to_string()))?;
    write(&dir.join("meta.json"), json.as_bytes())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read(path)?).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn load(dir: &Path) -> Result<(BaseArtifacts, CheckpointMeta)> {
    let meta: CheckpointMeta = read_json(&dir.join("meta.json"))?;
    let curves: Curves = read_json(&dir.join("curves.json"))?;
    let ifc = decode_ifc(&read(&dir.join("ifc.bin"))?)?;
    let head = decode_head(&read(&dir.join("head.bin"))?)?;
    let bank = decode_bank(&read(&dir.join("bank.bin"))?)?;
    let base_stats = decode_stats(&read(&dir.join("stats.bin"))?)?;
    let dims = [ifc.dim(), head.dim(), bank.dim()];
    if dims.iter().any(|&d| d != meta.dim) || base_stats.values().any(|s| s.mean.dim() != meta.dim) {
        return Err(Error::CheckpointMismatch(format!(
            "{}: component dimensions {dims:?} disagree with metadata dim {}",
            dir.display(),
            meta.dim
        )));
    }
    if head.num_classes() != meta.num_base || base_stats.len() != meta.num_base {
        return Err(Error::CheckpointMismatch(format!(
            "{}: head/statistics class counts disagree with {} base classes",
            dir.display(),
            meta.num_base
        )));
    }
    Ok((
        BaseArtifacts {
            head,
            ifc,
            bank,
            base_stats,
            ifc_curve: curves.ifc,
            cls_curve: curves.cls,
        },
        meta,
    ))
}
