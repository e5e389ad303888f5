use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FSUMPRM\0";
pub const CHECKPOINT_VERSION: u32 = 1;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter {name:?}")));
        }
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Binary checkpoint: magic, version, count, then per tensor the name,
    /// rank, dimensions and raw little-endian `f64` values.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u64).to_le_bytes())?;
        for (name, t) in self.names.iter().zip(&self.tensors) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.num_values() * 8);
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let bad = |m: &str| Error::Contract(format!("malformed parameter file: {m}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&mut r).ok_or_else(|| bad("truncated header"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let count = read_u64(&mut r).ok_or_else(|| bad("truncated header"))?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r).ok_or_else(|| bad("truncated entry"))? as usize;
            if r.len() < name_len {
                return Err(bad("truncated name"));
            }
            let name = std::str::from_utf8(&r[..name_len]).map_err(|_| bad("non-utf8 name"))?.to_string();
            r = &r[name_len..];
            let rank = read_u32(&mut r).ok_or_else(|| bad("truncated entry"))? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r).ok_or_else(|| bad("truncated shape"))? as usize);
            }
            let n: usize = shape.iter().product();
            if r.len() < n * 8 {
                return Err(bad("truncated values"));
            }
            let data = r[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            r = &r[n * 8..];
            store.insert(&name, Tensor::new(shape, data)?)?;
        }
        if !r.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_u32(r: &mut &[u8]) -> Option<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).ok()?;
    Some(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Option<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).ok()?;
    Some(u64::from_le_bytes(b))
}

/// One gradient tensor per parameter, aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    grads: Vec<Tensor>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        ParamGrads {
            grads: store.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in &mut self.grads {
            t.data_mut().iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Tensor::is_finite)
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn max_abs_diff(&self, other: &ParamGrads) -> f64 {
        self.grads
            .iter()
            .zip(&other.grads)
            .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}
