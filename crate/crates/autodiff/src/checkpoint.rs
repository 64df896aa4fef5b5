//! Binary container of named tensors.
//!
//! Layout: the 8-byte magic `FDRCKPT\0`, a little-endian `u32` version, a
//! little-endian `u64` header length, a JSON header and then every tensor's
//! values as little-endian `f64` in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterSpec, Adapters};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::AutodiffError;

const MAGIC: &[u8; 8] = b"FDRCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// What the checkpoint holds, e.g. `forecaster`, `adapter`, `surrogate`.
    pub kind: String,
    /// Free-form description such as model configuration and scalers.
    pub metadata: serde_json::Value,
    pub adapter: Option<AdapterSpec>,
    /// Adapted layer names for adapter checkpoints.
    pub layers: Vec<String>,
    pub tensors: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    metadata: serde_json::Value,
    adapter: Option<AdapterSpec>,
    #[serde(default)]
    layers: Vec<String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, metadata: serde_json::Value, tensors: ParamStore) -> Self {
        Self {
            kind: kind.into(),
            metadata,
            adapter: None,
            layers: Vec::new(),
            tensors,
        }
    }

    pub fn from_adapters(adapters: &Adapters, metadata: serde_json::Value) -> Self {
        Self {
            kind: "adapter".into(),
            metadata,
            adapter: Some(adapters.spec.clone()),
            layers: adapters.layers.clone(),
            tensors: adapters.params.clone(),
        }
    }

    pub fn into_adapters(self) -> Result<Adapters, AutodiffError> {
        let spec = self
            .adapter
            .ok_or_else(|| AutodiffError::Checkpoint(format!("`{}` checkpoint holds no adapter", self.kind)))?;
        Ok(Adapters {
            spec,
            layers: self.layers,
            params: self.tensors,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), AutodiffError> {
        let header = Header {
            kind: self.kind.clone(),
            metadata: self.metadata.clone(),
            adapter: self.adapter.clone(),
            layers: self.layers.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::new();
        for (_, t) in self.tensors.iter() {
            buf.clear();
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, AutodiffError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(AutodiffError::Checkpoint("not a checkpoint file".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(AutodiffError::Checkpoint(format!("unsupported version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        let mut tensors = ParamStore::new();
        for entry in header.tensors {
            let [rows, cols] = entry.shape;
            let mut bytes = vec![0u8; rows * cols * 8];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.insert(entry.name, Tensor::new(rows, cols, data)?);
        }
        Ok(Self {
            kind: header.kind,
            metadata: header.metadata,
            adapter: header.adapter,
            layers: header.layers,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self, AutodiffError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}
