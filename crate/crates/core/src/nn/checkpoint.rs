//! `NNCK` parameter checkpoints.
//!
//! Layout (little-endian): magic `NNCK`, u32 version, u32 parameter count;
//! per parameter a u32 name length, UTF-8 name, u8 rank, u32 extents and
//! f32 data; then a u32 length and a JSON metadata block.

use std::path::Path;

use super::network::Parameter;
use super::tensor::Tensor;
use crate::binio::{Reader, Writer};
use crate::error::Result;

const MAGIC: &[u8; 4] = b"NNCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<(String, Tensor<f32>)>,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn from_params(params: &[Parameter], metadata: serde_json::Value) -> Self {
        Checkpoint {
            params: params.iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
            metadata,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new(MAGIC);
        w.u32(VERSION);
        w.u32(self.params.len() as u32);
        for (name, t) in &self.params {
            w.u32(name.len() as u32);
            w.bytes(name.as_bytes());
            w.u8(t.shape().len() as u8);
            for &e in t.shape() {
                w.u32(e as u32);
            }
            w.f32s(t.data().iter().copied());
        }
        let meta = serde_json::to_vec(&self.metadata)?;
        w.u32(meta.len() as u32);
        w.bytes(&meta);
        Ok(w.buf)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new("NNCK", MAGIC, buf)?;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.err("version", format!("unsupported version {version}")));
        }
        let count = r.u32("param_count")?;
        let mut params = Vec::new();
        for i in 0..count {
            let len = r.u32(&format!("param[{i}].name_len"))? as usize;
            let name = std::str::from_utf8(r.take(len, &format!("param[{i}].name"))?)
                .map_err(|e| r.err(&format!("param[{i}].name"), e.to_string()))?
                .to_owned();
            let rank = r.u8(&format!("{name}.rank"))? as usize;
            if rank > 4 {
                return Err(r.err(&format!("{name}.rank"), format!("rank {rank} exceeds 4")));
            }
            let mut shape = Vec::with_capacity(rank);
            for d in 0..rank {
                shape.push(r.u32(&format!("{name}.extent[{d}]"))? as usize);
            }
            let n = shape.iter().try_fold(1u64, |acc, &e| acc.checked_mul(e as u64));
            let n = r.count(n.unwrap_or(u64::MAX), 4, &format!("{name}.data"))?;
            let data = r.f32s(n, &format!("{name}.data"))?;
            params.push((name, Tensor::new(&shape, data)?));
        }
        let meta_len = r.u32("metadata_len")? as usize;
        let meta = r.take(meta_len, "metadata")?;
        let metadata = serde_json::from_slice(meta).map_err(|e| r.err("metadata", e.to_string()))?;
        r.finish()?;
        Ok(Checkpoint { params, metadata })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
