//! `BBKD1` parameter checkpoints.
//!
//! ```text
//! b"BBKD1" | u32 version | u32 tensor count
//! per tensor: u32 name length | UTF-8 name | u32 rank | u64 dims × rank | f64 × product(dims)
//! ```
//!
//! Integers and floats are little-endian. Tensors are stored in name order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::denoiser::DenoiserParams;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 5] = b"BBKD1";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &DenoiserParams) -> Vec<u8> {
    let tensors = params.tensors();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format(self.path, "truncated BBKD1 checkpoint"));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<DenoiserParams> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format(path, "not a BBKD1 checkpoint"));
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
        path,
    };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported BBKD1 version {version} (expected {CHECKPOINT_VERSION})"),
        ));
    }
    let count = r.u32()?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = usize::try_from(r.u64()?).map_err(|_| Error::format(path, "dimension overflow"))?;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| Error::format(path, "dimension overflow"))?;
            shape.push(d);
        }
        let raw = r.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| Error::format(path, "dimension overflow"))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|_| Error::format(path, format!("tensor `{name}` is not finite")))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::format(path, format!("duplicate tensor `{name}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last tensor"));
    }
    DenoiserParams::from_tensors(tensors).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_checkpoint(params: &DenoiserParams, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_checkpoint(path: &Path) -> Result<DenoiserParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_checkpoint(&bytes, path)
}
