//! Named parameter tensors and the model file format.
//!
//! File layout: the 8-byte magic `SGNET001`, a little-endian `u64` header
//! length, a JSON header `{"config": .., "tensors": [{"name", "shape"}]}`,
//! then every tensor's values as little-endian `f32` in header order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::{GraspNetError, ModelConfig};

const MAGIC: &[u8; 8] = b"SGNET001";

/// Parameters addressed by dotted path, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    pub tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn get(&self, name: &str) -> Result<&Tensor, GraspNetError> {
        self.tensors.get(name).ok_or_else(|| GraspNetError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, GraspNetError> {
        self.tensors.get_mut(name).ok_or_else(|| GraspNetError::MissingParam(name.to_string()))
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// `self += alpha * other` for every shared name.
    pub fn axpy(&mut self, alpha: f64, other: &ParamSet) {
        for (name, t) in &mut self.tensors {
            if let Some(o) = other.tensors.get(name) {
                t.data.iter_mut().zip(&o.data).for_each(|(a, b)| *a += alpha * b);
            }
        }
    }
}

/// Truncated normal (±2σ) sample.
pub fn trunc_normal(sigma: f64, rng: &mut impl Rng) -> f64 {
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    loop {
        let v: f64 = n.sample(rng);
        if v.abs() <= 2.0 * sigma {
            return v;
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn write_model(w: &mut impl Write, cfg: &ModelConfig, params: &ParamSet) -> Result<(), GraspNetError> {
    let header = Header {
        config: cfg.clone(),
        tensors: params.tensors.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape.clone() }).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| GraspNetError::Format(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in params.tensors.values() {
        for v in &t.data {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_model(r: &mut impl Read) -> Result<(ModelConfig, ParamSet), GraspNetError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(GraspNetError::Format("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 26 {
        return Err(GraspNetError::Format(format!("header of {len} bytes is implausible")));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| GraspNetError::Format(e.to_string()))?;
    let mut params = ParamSet::default();
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        params.insert(entry.name, Tensor::new(entry.shape, data)?);
    }
    Ok((header.config, params))
}

pub fn save_model(path: &Path, cfg: &ModelConfig, params: &ParamSet) -> Result<(), GraspNetError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_model(&mut f, cfg, params)?;
    f.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(ModelConfig, ParamSet), GraspNetError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_model(&mut f)
}
