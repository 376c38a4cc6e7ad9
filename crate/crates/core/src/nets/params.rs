use std::collections::HashMap;
use std::fs;
use std::path::Path;

use dda_tensor::{Float, Graph, Tensor, Var};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

/// Ordered named tensors. Iteration order is insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    config_hash: String,
    total: usize,
    entries: Vec<Entry>,
}

/// Parameters bound into a graph as tracked or constant leaves.
pub struct Bound<'a> {
    vars: Vec<Var>,
    index: &'a HashMap<String, usize>,
}

impl Bound<'_> {
    pub fn get(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("no parameter named `{name}`"),
        }
    }

    /// Leaves in parameter order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Float> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn cast<U: Float>(&self) -> ParamSet<U> {
        ParamSet { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect(), index: self.index.clone() }
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            index: self.index.clone(),
        }
    }

    pub fn same_layout(&self, other: &ParamSet<T>) -> bool {
        self.names == other.names && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.shape() == b.shape())
    }

    /// Adds every parameter to `g`, tracked for gradients when `trainable`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound<'_> {
        let vars = self.tensors.iter().map(|t| g.leaf(t.clone(), trainable)).collect();
        Bound { vars, index: &self.index }
    }

    /// Binds with caller-provided leaves (used by gradient checks).
    pub fn bind_vars(&self, vars: Vec<Var>) -> Bound<'_> {
        assert_eq!(vars.len(), self.len());
        Bound { vars, index: &self.index }
    }

    /// Flat little-endian f32 values in parameter order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 * self.count());
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        out
    }

    /// Writes `<stem>.params.bin` and `<stem>.params.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str, config_hash: &str) -> Result<()> {
        let mut entries = Vec::with_capacity(self.len());
        let mut offset = 0;
        for (n, t) in self.names.iter().zip(&self.tensors) {
            entries.push(Entry { name: n.clone(), shape: t.shape().to_vec(), offset });
            offset += t.len();
        }
        let m = Manifest { dtype: "f32".into(), config_hash: config_hash.into(), total: offset, entries };
        let bin = dir.join(format!("{stem}.params.bin"));
        fs::write(&bin, self.to_bytes()).at(&bin)?;
        let json = dir.join(format!("{stem}.params.json"));
        fs::write(&json, serde_json::to_string_pretty(&m)? + "\n").at(&json)
    }

    /// Reads parameters saved by [`ParamSet::save`], checking names, shapes
    /// and the config hash against `layout`.
    pub fn load(dir: &Path, stem: &str, config_hash: &str, layout: &ParamSet<T>) -> Result<Self> {
        let json = dir.join(format!("{stem}.params.json"));
        let bad = |reason: String| Error::Checkpoint { path: json.clone(), reason };
        let m: Manifest = serde_json::from_str(&fs::read_to_string(&json).at(&json)?)?;
        if m.config_hash != config_hash {
            return Err(bad(format!("config hash {} does not match {config_hash}", m.config_hash)));
        }
        if m.dtype != "f32" || m.entries.len() != layout.len() {
            return Err(bad("parameter list does not match the network".into()));
        }
        let bin = dir.join(format!("{stem}.params.bin"));
        let bytes = fs::read(&bin).at(&bin)?;
        if bytes.len() != 4 * m.total || m.total != layout.count() {
            return Err(bad(format!("{} bytes for {} parameters", bytes.len(), m.total)));
        }
        let mut out = ParamSet::new();
        for (e, (name, t)) in m.entries.iter().zip(layout.names.iter().zip(&layout.tensors)) {
            if &e.name != name || e.shape != t.shape() {
                return Err(bad(format!("entry {} {:?} does not match {name} {:?}", e.name, e.shape, t.shape())));
            }
            let data = bytes[4 * e.offset..4 * (e.offset + t.len())]
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect();
            out.push(name.clone(), Tensor::from_vec(&e.shape, data));
        }
        if !out.all_finite() {
            return Err(bad("non-finite parameter values".into()));
        }
        Ok(out)
    }
}

/// Short hex digest of a serializable config.
pub fn config_hash<C: Serialize>(cfg: &C) -> String {
    let bytes = serde_json::to_vec(cfg).expect("configs serialize");
    let d = Sha256::digest(&bytes);
    d.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
