//! Versioned model container.
//!
//! Layout: the 8-byte magic `ALRTNET\0`, a little-endian `u32` format version,
//! a little-endian `u64` header length, the UTF-8 JSON header, then every
//! tensor listed in the header's manifest, row-major, as little-endian `f32`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ALRTNET\0";
pub const FORMAT_VERSION: u32 = 1;
const MAX_HEADER: u64 = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Recurrent,
    Baseline,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: ModelKind,
    pub preset: String,
    pub configuration: String,
    /// Kind-specific configuration.
    pub config: serde_json::Value,
    pub vocab_hash: String,
    pub embedding_dim: usize,
    pub tensors: Vec<TensorEntry>,
    /// Kind-specific non-tensor state.
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub header: Header,
    pub tensors: Vec<Tensor>,
}

impl Container {
    /// Builds the header manifest from `tensors`.
    pub fn new(mut header: Header, tensors: Vec<Tensor>) -> Result<Self> {
        for t in &tensors {
            if t.data.len() != t.shape[0] * t.shape[1] {
                return Err(Error::Format(format!("tensor {} holds {} values for shape {:?}", t.name, t.data.len(), t.shape)));
            }
        }
        header.tensors = tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape,
            })
            .collect();
        Ok(Container { header, tensors })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::new();
        for t in &self.tensors {
            buf.clear();
            buf.reserve(t.data.len() * 4);
            for &v in &t.data {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    /// Reads and validates a container: magic, version, manifest shapes and
    /// exact payload length, finite values.
    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::Format("truncated before magic".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v).map_err(|_| Error::Format("truncated version".into()))?;
        let version = u32::from_le_bytes(v);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let mut l = [0u8; 8];
        r.read_exact(&mut l).map_err(|_| Error::Format("truncated header length".into()))?;
        let len = u64::from_le_bytes(l);
        if len > MAX_HEADER {
            return Err(Error::Format(format!("header length {len} is implausible")));
        }
        let mut header_bytes = vec![0u8; len as usize];
        r.read_exact(&mut header_bytes).map_err(|_| Error::Format("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&header_bytes)?;

        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let expected: usize = header.tensors.iter().map(|t| t.shape[0] * t.shape[1] * 4).sum();
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "payload is {} bytes but the manifest declares {expected}",
                payload.len()
            )));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut chunks = payload.chunks_exact(4);
        for entry in &header.tensors {
            let n = entry.shape[0] * entry.shape[1];
            let data: Vec<f64> = chunks
                .by_ref()
                .take(n)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("tensor {} holds non-finite values", entry.name)));
            }
            tensors.push(Tensor {
                name: entry.name.clone(),
                shape: entry.shape,
                data,
            });
        }
        Ok(Container { header, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Checks names and shapes against an expected manifest, in order.
    pub fn verify_manifest(&self, expected: &[TensorEntry]) -> Result<()> {
        if self.header.tensors.len() != expected.len() {
            return Err(Error::Format(format!(
                "manifest lists {} tensors, configuration needs {}",
                self.header.tensors.len(),
                expected.len()
            )));
        }
        for (got, want) in self.header.tensors.iter().zip(expected) {
            if got != want {
                return Err(Error::Format(format!(
                    "manifest entry {} {:?} does not match expected {} {:?}",
                    got.name, got.shape, want.name, want.shape
                )));
            }
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
    }
}
