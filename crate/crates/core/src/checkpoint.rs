//! Self-describing parameter container.
//!
//! Layout: the 8-byte magic, a little-endian `u64` manifest length, the JSON
//! manifest, then every parameter array as little-endian `f64` in manifest
//! order. The manifest records array names, shapes and offsets plus a SHA-256
//! of the data section, which is verified on load.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::neural::ParameterSet;
use crate::trajdata::{StandardizationStats, TypeLabels};

pub const MAGIC: &[u8; 8] = b"RRNNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the data section, in scalars.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub byte_order: String,
    pub scalar: String,
    /// Model family, e.g. `responsernn` or `red`.
    pub kind: String,
    pub model: serde_json::Value,
    pub stats: StandardizationStats,
    pub labels: Option<TypeLabels>,
    /// Training configuration and provenance, if the checkpoint came from a run.
    pub training: Option<serde_json::Value>,
    pub arrays: Vec<ArrayEntry>,
    pub data_sha256: String,
}

/// A loaded checkpoint: manifest metadata plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub model: serde_json::Value,
    pub stats: StandardizationStats,
    pub labels: Option<TypeLabels>,
    pub training: Option<serde_json::Value>,
    pub params: ParameterSet,
}

fn data_bytes(params: &ParameterSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.num_scalars() * 8);
    for a in params.arrays() {
        for v in a.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

impl Checkpoint {
    pub fn manifest(&self) -> Manifest {
        let mut offset = 0;
        let arrays = self
            .params
            .iter()
            .map(|(name, a)| {
                let e = ArrayEntry { name: name.to_string(), shape: a.shape().to_vec(), offset };
                offset += a.len();
                e
            })
            .collect();
        Manifest {
            format_version: FORMAT_VERSION,
            byte_order: "little".into(),
            scalar: "f64".into(),
            kind: self.kind.clone(),
            model: self.model.clone(),
            stats: self.stats,
            labels: self.labels.clone(),
            training: self.training.clone(),
            arrays,
            data_sha256: hex::encode(Sha256::digest(data_bytes(&self.params))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let data = data_bytes(&self.params);
        let manifest = self.manifest();
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + json.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json_end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest =
            serde_json::from_slice(&bytes[16..json_end]).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", manifest.format_version)));
        }
        if manifest.byte_order != "little" || manifest.scalar != "f64" {
            return Err(bad("only little-endian f64 data is supported"));
        }
        let data = &bytes[json_end..];
        if hex::encode(Sha256::digest(data)) != manifest.data_sha256 {
            return Err(bad("data checksum mismatch"));
        }
        let total: usize = manifest.arrays.iter().map(|a| a.shape.iter().product::<usize>()).sum();
        if data.len() != total * 8 {
            return Err(Error::Checkpoint(format!("data section has {} bytes, manifest needs {}", data.len(), total * 8)));
        }
        let mut params = ParameterSet::new();
        let mut expected = 0;
        for entry in &manifest.arrays {
            let n: usize = entry.shape.iter().product();
            if entry.offset != expected {
                return Err(Error::Checkpoint(format!("array {} has offset {}, expected {expected}", entry.name, entry.offset)));
            }
            if params.id(&entry.name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate array {}", entry.name)));
            }
            let values: Vec<f64> = data[expected * 8..(expected + n) * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let array = ArrayD::from_shape_vec(IxDyn(&entry.shape), values).expect("length checked");
            params.push(entry.name.clone(), array);
            expected += n;
        }
        Ok(Self {
            kind: manifest.kind,
            model: manifest.model,
            stats: manifest.stats,
            labels: manifest.labels,
            training: manifest.training,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Decodes the model section into a typed configuration.
    pub fn model_config<T: serde::de::DeserializeOwned>(&self, kind: &str) -> Result<T> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("checkpoint holds a `{}` model, expected `{kind}`", self.kind)));
        }
        serde_json::from_value(self.model.clone()).map_err(|e| Error::Checkpoint(format!("model config: {e}")))
    }
}
