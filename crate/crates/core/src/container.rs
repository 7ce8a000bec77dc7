//! Single-file binary container shared by datasets and checkpoints.
//!
//! Layout:
//!
//! ```text
//! magic (8 bytes) | version u32 LE | header length u64 LE | JSON header
//! | raw little-endian blocks, in header order | SHA-256 of all preceding bytes
//! ```
//!
//! The header is `{kind, meta, blocks: [{name, dtype, shape}]}`; block byte
//! lengths follow from dtype and shape.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{DType, Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PROTGO\0\x01";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
}

impl BlockInfo {
    pub fn byte_len(&self) -> usize {
        self.shape.iter().product::<usize>() * self.dtype.size()
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    blocks: Vec<BlockInfo>,
}

/// Builder and parsed form of a container file.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    blocks: Vec<(BlockInfo, Vec<u8>)>,
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Container {
            kind: kind.into(),
            meta,
            blocks: Vec::new(),
        }
    }

    pub fn blocks(&self) -> impl Iterator<Item = &BlockInfo> {
        self.blocks.iter().map(|(info, _)| info)
    }

    fn push_raw(&mut self, name: &str, dtype: DType, shape: &[usize], bytes: Vec<u8>) -> Result<()> {
        if self.blocks.iter().any(|(b, _)| b.name == name) {
            return Err(Error::Config(format!("duplicate block name {name}")));
        }
        let info = BlockInfo {
            name: name.to_string(),
            dtype,
            shape: shape.to_vec(),
        };
        debug_assert_eq!(info.byte_len(), bytes.len());
        self.blocks.push((info, bytes));
        Ok(())
    }

    pub fn push_tensor<T: Real>(&mut self, name: &str, tensor: &Tensor<T>) -> Result<()> {
        let mut bytes = Vec::with_capacity(tensor.len() * T::DTYPE.size());
        for &v in tensor.data() {
            v.extend_le(&mut bytes);
        }
        self.push_raw(name, T::DTYPE, tensor.shape(), bytes)
    }

    pub fn push_u8(&mut self, name: &str, shape: &[usize], data: &[u8]) -> Result<()> {
        self.push_raw(name, DType::U8, shape, data.to_vec())
    }

    pub fn push_u32(&mut self, name: &str, shape: &[usize], data: &[u32]) -> Result<()> {
        let bytes = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.push_raw(name, DType::U32, shape, bytes)
    }

    fn block(&self, name: &str, dtype: DType) -> Result<(&BlockInfo, &[u8])> {
        let (info, bytes) = self
            .blocks
            .iter()
            .find(|(b, _)| b.name == name)
            .ok_or_else(|| Error::Incompatible(format!("missing block {name}")))?;
        if info.dtype != dtype {
            return Err(Error::Incompatible(format!(
                "block {name} has dtype {:?}, expected {dtype:?}",
                info.dtype
            )));
        }
        Ok((info, bytes))
    }

    pub fn tensor<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        let (info, bytes) = self.block(name, T::DTYPE)?;
        let data = bytes.chunks_exact(T::DTYPE.size()).map(T::read_le).collect();
        Tensor::new(info.shape.clone(), data)
    }

    pub fn u8_block(&self, name: &str) -> Result<(Vec<usize>, Vec<u8>)> {
        let (info, bytes) = self.block(name, DType::U8)?;
        Ok((info.shape.clone(), bytes.to_vec()))
    }

    pub fn u32_block(&self, name: &str) -> Result<(Vec<usize>, Vec<u32>)> {
        let (info, bytes) = self.block(name, DType::U32)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok((info.shape.clone(), data))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            blocks: self.blocks.iter().map(|(b, _)| b.clone()).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, bytes) in &self.blocks {
            out.extend_from_slice(bytes);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Parses `bytes`, checking the trailing digest before anything else so a
    /// truncated or corrupted file never yields a partial result.
    pub fn from_bytes(bytes: &[u8], expected_kind: &str) -> Result<Self> {
        let fixed = MAGIC.len() + 4 + 8;
        if bytes.len() < fixed + DIGEST_LEN {
            return Err(Error::Integrity(format!("file is too short ({} bytes)", bytes.len())));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Integrity("checksum mismatch (truncated or corrupted file)".into()));
        }
        if &body[..MAGIC.len()] != MAGIC {
            return Err(Error::Incompatible("not a protgo container".into()));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Incompatible(format!(
                "format version {version}, this build reads version {FORMAT_VERSION}"
            )));
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let header_bytes = body
            .get(fixed..fixed.saturating_add(header_len))
            .ok_or_else(|| Error::Integrity("header length exceeds file".into()))?;
        let header: Header = serde_json::from_slice(header_bytes)
            .map_err(|e| Error::Integrity(format!("unreadable header: {e}")))?;
        if header.kind != expected_kind {
            return Err(Error::Incompatible(format!(
                "expected a {expected_kind} file, found {}",
                header.kind
            )));
        }
        let mut offset = fixed + header_len;
        let mut blocks = Vec::with_capacity(header.blocks.len());
        for info in header.blocks {
            let end = offset + info.byte_len();
            let data = body
                .get(offset..end)
                .ok_or_else(|| Error::Integrity(format!("block {} runs past end of file", info.name)))?;
            blocks.push((info, data.to_vec()));
            offset = end;
        }
        if offset != body.len() {
            return Err(Error::Integrity(format!("{} trailing bytes after blocks", body.len() - offset)));
        }
        Ok(Container {
            kind: header.kind,
            meta: header.meta,
            blocks,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, expected_kind: &str) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, expected_kind)
    }
}
