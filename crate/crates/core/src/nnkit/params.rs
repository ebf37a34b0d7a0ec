use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Glorot uniform on `[out, in]`-shaped weights.
    Glorot,
    Zeros,
}

#[derive(Debug, Clone)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
    init: Init,
}

/// Named real tensors over one flat buffer, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    tensors: Vec<TensorInfo>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    seed: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a zero-filled tensor. Panics on a duplicate name: layouts are
    /// built by code, so a clash is a programming error.
    pub fn register(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let len = shape.iter().product();
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.tensors.push(TensorInfo {
            name,
            shape: shape.to_vec(),
            offset: self.data.len(),
            len,
            init,
        });
        self.data.resize(self.data.len() + len, 0.0);
        ParamId(id)
    }

    /// Deterministic initialisation: Glorot-uniform weights
    /// `U(-sqrt(6/(fan_in+fan_out)), +...)`, zero biases. Each tensor draws
    /// from its own stream so layouts can grow without reshuffling earlier ones.
    pub fn init(&mut self, seed: u64) {
        self.seed = seed;
        for (k, t) in self.tensors.iter().enumerate() {
            let dst = &mut self.data[t.offset..t.offset + t.len];
            match t.init {
                Init::Zeros => dst.fill(0.0),
                Init::Glorot => {
                    let (fan_out, fan_in) = match t.shape.as_slice() {
                        [o, i] => (*o, *i),
                        [o] => (*o, 1),
                        _ => (t.len, 1),
                    };
                    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
                    let mut r = rng::stream(seed, k as u64);
                    for v in dst.iter_mut() {
                        *v = r.random_range(-bound..bound);
                    }
                }
            }
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        let t = &self.tensors[id.0];
        &self.data[t.offset..t.offset + t.len]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let t = &self.tensors[id.0];
        &mut self.data[t.offset..t.offset + t.len]
    }

    pub fn offset(&self, id: ParamId) -> usize {
        self.tensors[id.0].offset
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.tensors[id.0].shape
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.tensors[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Flat index ranges of tensors whose name starts with `prefix`.
    pub fn ranges_with_prefix(&self, prefix: &str) -> Vec<std::ops::Range<usize>> {
        self.tensors
            .iter()
            .filter(|t| t.name.starts_with(prefix))
            .map(|t| t.offset..t.offset + t.len)
            .collect()
    }

    pub fn is_bias(&self, id: ParamId) -> bool {
        self.tensors[id.0].init == Init::Zeros
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn to_tensors(&self) -> BTreeMap<String, TensorJson> {
        self.tensors
            .iter()
            .map(|t| {
                (
                    t.name.clone(),
                    TensorJson {
                        shape: t.shape.clone(),
                        data: self.data[t.offset..t.offset + t.len].to_vec(),
                    },
                )
            })
            .collect()
    }

    /// Same layout with the flat values taken from `flat`.
    pub fn tensors_from_flat(&self, prefix: &str, flat: &[f64]) -> BTreeMap<String, TensorJson> {
        self.tensors
            .iter()
            .map(|t| {
                (
                    format!("{prefix}{}", t.name),
                    TensorJson {
                        shape: t.shape.clone(),
                        data: flat[t.offset..t.offset + t.len].to_vec(),
                    },
                )
            })
            .collect()
    }

    /// Reads every registered tensor from `tensors[prefix + name]` into a flat
    /// buffer laid out like this store.
    pub fn flat_from_tensors(&self, prefix: &str, tensors: &BTreeMap<String, TensorJson>) -> Result<Vec<f64>> {
        let mut flat = vec![0.0; self.data.len()];
        for t in &self.tensors {
            let key = format!("{prefix}{}", t.name);
            let src = tensors
                .get(&key)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks tensor {key}")))?;
            if src.shape != t.shape || src.data.len() != t.len {
                return Err(Error::Size(format!(
                    "tensor {key}: checkpoint shape {:?} ({} values), model expects {:?}",
                    src.shape,
                    src.data.len(),
                    t.shape
                )));
            }
            flat[t.offset..t.offset + t.len].copy_from_slice(&src.data);
        }
        Ok(flat)
    }

    /// Loads values by name; every registered tensor must be present with a
    /// matching shape.
    pub fn load_tensors(&mut self, tensors: &BTreeMap<String, TensorJson>) -> Result<()> {
        self.data = self.flat_from_tensors("", tensors)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorJson {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// On-disk checkpoint: `{metadata, tensors: {name: {shape, data}}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub metadata: serde_json::Map<String, serde_json::Value>,
    pub tensors: BTreeMap<String, TensorJson>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}
