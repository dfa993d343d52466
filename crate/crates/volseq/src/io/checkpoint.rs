//! FFT1 checkpoint tensor archives.
//!
//! Layout: magic "FFT1"; u32 LE tensor count; per tensor a u16 LE name
//! length, the UTF-8 name, a u8 rank, rank u32 LE dims, then raw
//! little-endian float32 data. Round-trips preserve every bit.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FFT1";

const MAX_RANK: u8 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn archive_to_bytes(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::Precondition(format!("tensor name too long: {name}")));
        }
        let shape = t.shape();
        if shape.len() > MAX_RANK as usize {
            return Err(Error::Precondition(format!(
                "tensor {name} has rank {} > {MAX_RANK}",
                shape.len()
            )));
        }
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(shape.len() as u8);
        for d in &shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        t.with_data(|vals| {
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        });
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated {what} at byte {}: need {n} bytes, {} remain",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16_le(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Strict FFT1 decoder. Errors carry the byte offset of the defect.
pub fn parse_archive(bytes: &[u8]) -> Result<Vec<RawTensor>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic at byte 0 (expected FFT1)".into()));
    }
    let count = cur.u32_le("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for ti in 0..count {
        let name_len = cur.u16_le("name length")? as usize;
        let name_off = cur.pos;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| Error::Format(format!("tensor {ti}: name at byte {name_off} is not UTF-8")))?
            .to_string();
        let rank_off = cur.pos;
        let rank = cur.take(1, "rank")?[0];
        if rank > MAX_RANK {
            return Err(Error::Format(format!(
                "tensor {name}: rank {rank} at byte {rank_off} exceeds {MAX_RANK}"
            )));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel = 1u64;
        for _ in 0..rank {
            let d = cur.u32_le("dimension")? as u64;
            numel = numel.saturating_mul(d);
            shape.push(d as usize);
        }
        let data_off = cur.pos;
        let need = numel
            .checked_mul(4)
            .filter(|n| *n <= (bytes.len() - data_off) as u64)
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated tensor data at byte {data_off}: tensor {name} declares {numel} elements, {} bytes remain",
                    bytes.len() - data_off
                ))
            })? as usize;
        let raw = cur.take(need, "tensor data")?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(RawTensor { name, shape, values });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after byte {}",
            bytes.len() - cur.pos,
            cur.pos
        )));
    }
    Ok(tensors)
}

pub fn save_checkpoint(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    std::fs::write(path, archive_to_bytes(tensors)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<RawTensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_archive(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Copy archived values into named model parameters, bit-exact. Every
/// archived tensor must match one parameter by name and shape, and every
/// parameter must be present in the archive.
pub fn load_into(params: &[(String, Tensor)], archive: &[RawTensor]) -> Result<()> {
    for raw in archive {
        let Some((_, t)) = params.iter().find(|(n, _)| *n == raw.name) else {
            return Err(Error::Format(format!(
                "checkpoint tensor {} does not match any model parameter",
                raw.name
            )));
        };
        if t.shape() != raw.shape {
            return Err(Error::Format(format!(
                "checkpoint tensor {} has shape {:?}, model expects {:?}",
                raw.name,
                raw.shape,
                t.shape()
            )));
        }
        t.set_data(&raw.values)?;
    }
    for (name, _) in params {
        if !archive.iter().any(|r| r.name == *name) {
            return Err(Error::Format(format!(
                "checkpoint is missing model parameter {name}"
            )));
        }
    }
    Ok(())
}
