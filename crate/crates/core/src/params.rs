//! Named parameter storage and the checkpoint format.
//!
//! A checkpoint is a directory holding `manifest.json` (parameter names, shapes
//! and byte offsets, plus an opaque config blob) and `params.xten`, the
//! parameters written back to back as XTEN records in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Seek, SeekFrom};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::io::{read_tensor, write_tensor};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Inserts every parameter as a trainable leaf; `vars[id.index()]` is the
    /// node for `id`.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| g.param(t.clone())).collect()
    }

    /// Inserts every parameter as a constant, for inference.
    pub fn bind_frozen(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| g.input(t.clone())).collect()
    }

    pub fn write_checkpoint(&self, dir: &Path, config: serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut blob = BufWriter::new(File::create(dir.join("params.xten"))?);
        let mut entries = Vec::with_capacity(self.len());
        let mut offset = 0u64;
        for (name, t) in self.names.iter().zip(&self.tensors) {
            entries.push(ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            write_tensor(&mut blob, t)?;
            offset += 8 + 8 * t.rank() as u64 + 8 * t.numel() as u64;
        }
        use std::io::Write;
        blob.flush()?;
        let manifest = Manifest {
            format: MANIFEST_FORMAT.to_string(),
            params: entries,
            config,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    /// Returns the stored parameters and the config blob from the manifest.
    pub fn read_checkpoint(dir: &Path) -> Result<(Self, serde_json::Value)> {
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::Data(format!("unknown checkpoint format {}", manifest.format)));
        }
        let mut blob = BufReader::new(File::open(dir.join("params.xten"))?);
        let mut store = ParamStore::new();
        for e in manifest.params {
            blob.seek(SeekFrom::Start(e.offset))?;
            let t = read_tensor(&mut blob)?;
            if t.shape() != e.shape.as_slice() {
                return Err(Error::Data(format!(
                    "checkpoint parameter {} has shape {:?}, manifest says {:?}",
                    e.name,
                    t.shape(),
                    e.shape
                )));
            }
            store.add(e.name, t);
        }
        Ok((store, manifest.config))
    }
}

const MANIFEST_FORMAT: &str = "xten-concat-v1";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    params: Vec<ManifestEntry>,
    config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

/// Uniform initialisation in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("glorot_uniform: valid shape")
}
