//! Binary latent format.
//!
//! ```text
//! offset  size        field
//! 0       6           magic "PSF4D\0"
//! 6       2           version, u16 LE (= 1)
//! 8       1           dtype tag (0 = f64, 1 = f32)
//! 9       1           rank r
//! 10      8 * r       axis lengths, u64 LE
//! ..      numel * sz  row-major payload, LE
//! ```
//!
//! No padding, no compression. `f32` exists only at this boundary; loading
//! widens to `f64`.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"PSF4D\0";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_FIXED: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F64,
    F32,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F64 => 0,
            DType::F32 => 1,
        }
    }

    fn size(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
        }
    }
}

/// Serializes `tensor` into the binary format.
pub fn write_to(tensor: &Tensor, dtype: DType) -> Vec<u8> {
    let rank = tensor.rank();
    assert!(rank <= u8::MAX as usize, "rank {rank} does not fit the header");
    let mut out = Vec::with_capacity(HEADER_FIXED + 8 * rank + tensor.len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(dtype.tag());
    out.push(rank as u8);
    for &n in tensor.shape() {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    match dtype {
        DType::F64 => {
            for v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        DType::F32 => {
            for v in tensor.data() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    out
}

/// Parses the binary format. `origin` is only used in error messages.
pub fn read_from(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    let truncated = |expected: usize| Error::Truncated {
        path: origin.to_path_buf(),
        expected,
        actual: bytes.len(),
    };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::MagicMismatch {
            path: origin.to_path_buf(),
        });
    }
    if bytes.len() < HEADER_FIXED {
        return Err(truncated(HEADER_FIXED));
    }
    let version = u16::from_le_bytes([bytes[6], bytes[7]]);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: origin.to_path_buf(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let dtype = match bytes[8] {
        0 => DType::F64,
        1 => DType::F32,
        tag => {
            return Err(Error::UnknownDtype {
                path: origin.to_path_buf(),
                tag,
            })
        }
    };
    let rank = bytes[9] as usize;
    let header = HEADER_FIXED + 8 * rank;
    if bytes.len() < header {
        return Err(truncated(header));
    }
    let shape: Vec<usize> = bytes[HEADER_FIXED..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")) as usize)
        .collect();
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .filter(|_| rank > 0 && !shape.contains(&0))
        .ok_or_else(|| Error::InvalidShape {
            shape: shape.clone(),
            reason: format!("bad header in {}", origin.display()),
        })?;
    let expected = numel
        .checked_mul(dtype.size())
        .and_then(|p| p.checked_add(header))
        .ok_or_else(|| truncated(usize::MAX))?;
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes {
            path: origin.to_path_buf(),
            extra: bytes.len() - expected,
        });
    }
    let payload = &bytes[header..];
    let data: Vec<f64> = match dtype {
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect(),
    };
    Tensor::new(shape, data)
}

pub fn save(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    save_as(path, tensor, DType::F64)
}

pub fn save_as(path: impl AsRef<Path>, tensor: &Tensor, dtype: DType) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_to(tensor, dtype)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_from(&bytes, path)
}
