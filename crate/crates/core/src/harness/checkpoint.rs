//! Directory checkpoints: `manifest.json` plus one binary blob per tensor.
//!
//! Blob layout: magic `GCPT0001`, u32 LE rank, u64 LE size per dimension,
//! then row-major f32 LE values.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{Mat, ParameterStore};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";
pub const BLOB_MAGIC: &[u8; 8] = b"GCPT0001";
const BLOB_EXT: &str = "bin";
/// Tensors with this suffix hold configuration scalars, not parameters.
pub const GAMMA_SUFFIX: &str = ".gamma";

/// A tensor stored at checkpoint precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn from_mat(m: &Mat) -> Self {
        Self {
            shape: vec![m.nrows(), m.ncols()],
            data: m.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![v as f32],
        }
    }

    /// Rank-1 tensors become a single row.
    pub fn to_mat(&self) -> Result<Mat> {
        let (r, c) = match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => return Err(Error::Checkpoint(format!("cannot view rank-{} tensor as a matrix", other.len()))),
        };
        Array2::from_shape_vec((r, c), self.data.iter().map(|&x| f64::from(x)).collect())
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.shape.len() + 4 * self.data.len());
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(format!("malformed tensor blob: {m}"));
        if bytes.len() < 12 || &bytes[..8] != BLOB_MAGIC {
            return Err(bad("missing magic"));
        }
        let rank = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header = 12 + 8 * rank;
        if bytes.len() < header {
            return Err(bad("truncated shape"));
        }
        let shape: Vec<usize> = bytes[12..header]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
            .collect();
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("size overflow"))?;
        if bytes.len() != header + 4 * count {
            return Err(bad("payload length does not match shape"));
        }
        let data = bytes[header..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self { shape, data })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    /// Which training phase wrote the checkpoint.
    pub kind: String,
    pub step: u64,
    pub split_hash: String,
    pub config: TrainConfig,
    /// Tensor names in storage order.
    pub tensors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub step: u64,
    pub split_hash: String,
    pub config: TrainConfig,
    pub tensors: IndexMap<String, Tensor>,
}

fn blob_name(tensor: &str) -> Result<String> {
    let ok = !tensor.is_empty()
        && tensor
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
        && !tensor.starts_with('.');
    if !ok {
        return Err(Error::Checkpoint(format!("tensor name `{tensor}` is not a valid file name")));
    }
    Ok(format!("{tensor}.{BLOB_EXT}"))
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, step: u64, split_hash: impl Into<String>, config: TrainConfig) -> Self {
        Self {
            kind: kind.into(),
            step,
            split_hash: split_hash.into(),
            config,
            tensors: IndexMap::new(),
        }
    }

    /// Adds every parameter of `store` whose name starts with one of
    /// `prefixes`, rounded to checkpoint precision.
    pub fn add_store(&mut self, store: &ParameterStore, prefixes: &[&str]) {
        for (name, p) in store.iter() {
            if prefixes.iter().any(|pre| name.starts_with(pre)) {
                self.tensors.insert(name.to_string(), Tensor::from_mat(&p.value));
            }
        }
    }

    pub fn add_scalar(&mut self, name: impl Into<String>, v: f64) {
        self.tensors.insert(name.into(), Tensor::scalar(v));
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no tensor `{name}`")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let t = self.tensor(name)?;
        match t.data.as_slice() {
            [v] => Ok(f64::from(*v)),
            _ => Err(Error::Checkpoint(format!("tensor `{name}` is not a scalar"))),
        }
    }

    /// Parameters as a store; configuration scalars are left out.
    pub fn to_store(&self) -> Result<ParameterStore> {
        let mut store = ParameterStore::new();
        for (name, t) in &self.tensors {
            if !name.ends_with(GAMMA_SUFFIX) {
                store.insert(name.clone(), t.to_mat()?)?;
            }
        }
        Ok(store)
    }

    pub fn manifest(&self) -> CheckpointManifest {
        CheckpointManifest {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            step: self.step,
            split_hash: self.split_hash.clone(),
            config: self.config.clone(),
            tensors: self.tensors.keys().cloned().collect(),
        }
    }

    /// Writes the checkpoint directory, creating it if needed. Stale blobs
    /// from an earlier checkpoint in the same directory are not removed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, t) in &self.tensors {
            let path = dir.join(blob_name(name)?);
            fs::write(&path, t.encode()).map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&self.manifest())?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_NAME);
        if !path.is_file() {
            return Err(Error::Checkpoint(format!("no checkpoint manifest at {}", path.display())));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let raw: serde_json::Value = serde_json::from_str(&text)?;
        let version = raw.get("format_version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(FORMAT_VERSION)) {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version:?}, expected {FORMAT_VERSION}"
            )));
        }
        let m: CheckpointManifest = serde_json::from_value(raw)?;
        m.config.validate()?;
        let mut tensors = IndexMap::with_capacity(m.tensors.len());
        for name in &m.tensors {
            let path = dir.join(blob_name(name)?);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            tensors.insert(name.clone(), Tensor::decode(&bytes)?);
        }
        Ok(Self {
            kind: m.kind,
            step: m.step,
            split_hash: m.split_hash,
            config: m.config,
            tensors,
        })
    }

    /// Loads and checks the checkpoint was written by the expected phase.
    pub fn load_kind(dir: impl AsRef<Path>, kind: &str) -> Result<Self> {
        let ck = Self::load(dir)?;
        if ck.kind != kind {
            return Err(Error::Checkpoint(format!("expected a `{kind}` checkpoint, found `{}`", ck.kind)));
        }
        Ok(ck)
    }
}
