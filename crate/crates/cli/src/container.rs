//! Versioned binary container: magic, JSON header, little-endian tensor
//! blobs, and a trailing SHA-256 of everything before it.
//!
//! ```text
//! b"FLABCONT" | u32 header_len | header (JSON) | blobs... | sha256[32]
//! ```

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use factlab_core::microlm::{DType, Real, Tensor, TensorMap};

pub const MAGIC: &[u8; 8] = b"FLABCONT";
const HASH_LEN: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("not a factlab container")]
    BadMagic,
    #[error("file is truncated or corrupted")]
    Truncated,
    #[error("content hash mismatch: file is corrupted")]
    HashMismatch,
    #[error("expected format {expected}, found {actual}")]
    Format { expected: String, actual: String },
    #[error("tensor {name}: stored as {stored}, requested {requested}")]
    DType { name: String, stored: &'static str, requested: &'static str },
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header<M> {
    format: String,
    meta: M,
    blobs: Vec<BlobEntry>,
}

/// Tensor groups to write, each under a name prefix.
pub struct Blobs<'a, T> {
    pub groups: Vec<(&'a str, &'a TensorMap<T>)>,
}

pub fn encode<M: Serialize, T: Real>(format: &str, meta: &M, blobs: &Blobs<'_, T>) -> Result<Vec<u8>, ContainerError> {
    let mut payload = Vec::new();
    let mut entries = Vec::new();
    for (prefix, map) in &blobs.groups {
        for t in map.iter() {
            let offset = payload.len();
            for &x in &t.data {
                x.write_le(&mut payload);
            }
            entries.push(BlobEntry {
                name: format!("{prefix}{}", t.name),
                shape: t.shape.clone(),
                dtype: T::DTYPE,
                offset,
                len: payload.len() - offset,
            });
        }
    }
    let header = serde_json::to_vec(&Header { format: format.to_string(), meta, blobs: entries })?;
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + payload.len() + HASH_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// A verified, parsed container.
pub struct Decoded<M> {
    pub format: String,
    pub meta: M,
    pub blobs: Vec<BlobEntry>,
    payload: Vec<u8>,
}

/// Reads only the header's format string and stored dtype, after checking
/// the hash.
pub fn peek(bytes: &[u8]) -> Result<(String, Option<DType>), ContainerError> {
    let d: Decoded<serde_json::Value> = decode_any(bytes)?;
    Ok((d.format, d.blobs.first().map(|b| b.dtype)))
}

fn decode_any<M: DeserializeOwned>(bytes: &[u8]) -> Result<Decoded<M>, ContainerError> {
    if bytes.len() < MAGIC.len() + 4 + HASH_LEN {
        return Err(if bytes.starts_with(MAGIC) || MAGIC.starts_with(bytes) {
            ContainerError::Truncated
        } else {
            ContainerError::BadMagic
        });
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let (body, hash) = bytes.split_at(bytes.len() - HASH_LEN);
    let hlen = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
    if 12 + hlen > body.len() {
        return Err(ContainerError::Truncated);
    }
    if Sha256::digest(body).as_slice() != hash {
        return Err(ContainerError::HashMismatch);
    }
    let header: Header<M> = serde_json::from_slice(&body[12..12 + hlen])?;
    let payload = body[12 + hlen..].to_vec();
    for b in &header.blobs {
        if b.offset + b.len > payload.len() || b.len != b.shape.iter().product::<usize>() * b.dtype.size() {
            return Err(ContainerError::Truncated);
        }
    }
    Ok(Decoded { format: header.format, meta: header.meta, blobs: header.blobs, payload })
}

pub fn decode<M: DeserializeOwned>(bytes: &[u8], expected_format: &str) -> Result<Decoded<M>, ContainerError> {
    let d = decode_any(bytes)?;
    if d.format != expected_format {
        return Err(ContainerError::Format { expected: expected_format.into(), actual: d.format });
    }
    Ok(d)
}

impl<M> Decoded<M> {
    /// Tensors whose names start with `prefix`, prefix removed, in stored
    /// order.
    pub fn tensors<T: Real>(&self, prefix: &str) -> Result<TensorMap<T>, ContainerError> {
        let mut tensors = Vec::new();
        for b in self.blobs.iter().filter(|b| b.name.starts_with(prefix)) {
            if b.dtype != T::DTYPE {
                return Err(ContainerError::DType {
                    name: b.name.clone(),
                    stored: b.dtype.as_str(),
                    requested: T::DTYPE.as_str(),
                });
            }
            let raw = &self.payload[b.offset..b.offset + b.len];
            let data = raw.chunks_exact(b.dtype.size()).map(T::read_le).collect();
            tensors.push(Tensor { name: b.name[prefix.len()..].to_string(), shape: b.shape.clone(), data });
        }
        Ok(TensorMap { tensors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorMap<f64> {
        let mut a = Tensor::zeros("a", &[2, 3]);
        a.data.iter_mut().enumerate().for_each(|(i, x)| *x = i as f64 * 0.1 - 0.2);
        let b = Tensor::zeros("b", &[4]);
        TensorMap { tensors: vec![a, b] }
    }

    #[test]
    fn roundtrip() {
        let m = sample();
        let bytes = encode("test/1", &7u32, &Blobs { groups: vec![("p.", &m)] }).unwrap();
        let d: Decoded<u32> = decode(&bytes, "test/1").unwrap();
        assert_eq!(d.meta, 7);
        assert_eq!(d.tensors::<f64>("p.").unwrap(), m);
        assert!(matches!(d.tensors::<f32>("p."), Err(ContainerError::DType { .. })));
    }

    #[test]
    fn corruption_detected() {
        let m = sample();
        let bytes = encode("test/1", &(), &Blobs { groups: vec![("", &m)] }).unwrap();
        assert!(matches!(decode::<()>(&bytes[..bytes.len() - 5], "test/1"), Err(ContainerError::HashMismatch)));
        assert!(matches!(decode::<()>(&bytes[..20], "test/1"), Err(ContainerError::Truncated)));
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(decode::<()>(&flipped, "test/1"), Err(ContainerError::HashMismatch)));
        assert!(matches!(decode::<()>(&bytes, "other/1"), Err(ContainerError::Format { .. })));
        assert!(matches!(decode::<()>(b"garbage garbage garbage garbage garbage garbage", "x"), Err(ContainerError::BadMagic)));
    }
}
