//! IDX container: big-endian magic `00 00 08 NDIM`, NDIM big-endian `u32`
//! sizes, then an unsigned-byte payload.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

pub const MAGIC_LABELS: u32 = 0x0000_0801;
pub const MAGIC_IMAGES: u32 = 0x0000_0803;

/// A decoded unsigned-byte IDX tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    /// Number of items along the first axis.
    pub fn items(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    /// Elements per item.
    pub fn item_len(&self) -> usize {
        self.dims[1..].iter().product()
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx(format!("truncated header at byte {at}")))
}

/// Parses an unsigned-byte IDX file (1-D labels or 3-D images).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    let magic = be_u32(bytes, 0)?;
    let ndim = match magic {
        MAGIC_LABELS => 1,
        MAGIC_IMAGES => 3,
        other => return Err(Error::Idx(format!("bad magic 0x{other:08x}"))),
    };
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        dims.push(be_u32(bytes, 4 + 4 * i)? as usize);
    }
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Idx(format!("dimension product overflows: {dims:?}")))?;
    let start = 4 + 4 * ndim;
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() < len {
        return Err(Error::Idx(format!(
            "truncated payload: expected {len} bytes, found {}",
            payload.len()
        )));
    }
    if payload.len() > len {
        return Err(Error::Idx(format!(
            "trailing data: expected {len} payload bytes, found {}",
            payload.len()
        )));
    }
    Ok(IdxTensor {
        dims,
        data: payload.to_vec(),
    })
}

/// Encodes a tensor; the magic is chosen from the rank (1 or 3).
pub fn write_idx(tensor: &IdxTensor) -> Result<Vec<u8>> {
    let magic = match tensor.dims.len() {
        1 => MAGIC_LABELS,
        3 => MAGIC_IMAGES,
        n => return Err(Error::Idx(format!("unsupported rank {n}"))),
    };
    let len: usize = tensor.dims.iter().product();
    if len != tensor.data.len() {
        return Err(Error::shape("write_idx", len, tensor.data.len()));
    }
    let mut out = Vec::with_capacity(4 + 4 * tensor.dims.len() + len);
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in &tensor.dims {
        let d = u32::try_from(d).map_err(|_| Error::Idx(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&tensor.data);
    Ok(out)
}

/// Reads an IDX file, transparently gunzipping it when it starts with the gzip magic.
pub fn read_idx_file(path: &Path) -> Result<IdxTensor> {
    let raw = fs::read(path).map_err(|e| Error::file(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::file(path, e))?;
        parse_idx(&out)
    } else {
        parse_idx(&raw)
    }
}
