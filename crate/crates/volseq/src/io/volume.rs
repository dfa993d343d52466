//! VOL1 volume files.
//!
//! Layout: magic "VOL1"; u32 LE d, h, w; u8 mask-present flag; float32 LE
//! voxels in z-major order (z, then y, then x); if flagged, a packed
//! bitmask in the same voxel order, least-significant bit first within
//! each byte. Total size is 17 + 4*d*h*w + ceil(d*h*w/8)*flag.

use std::path::Path;

use crate::{Error, Result};

pub const VOLUME_MAGIC: &[u8; 4] = b"VOL1";

/// Largest accepted dimension; keeps fuzzed headers from driving huge
/// allocations before the length check.
const MAX_DIM: u32 = 1 << 14;

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub voxels: Vec<f32>,
    pub mask: Option<Vec<bool>>,
}

impl Volume {
    pub fn new(dims: [usize; 3], voxels: Vec<f32>, mask: Option<Vec<bool>>) -> Result<Volume> {
        let n = dims[0] * dims[1] * dims[2];
        if voxels.len() != n {
            return Err(Error::Dim(format!(
                "volume dims {:?} need {n} voxels, got {}",
                dims,
                voxels.len()
            )));
        }
        if let Some(m) = &mask {
            if m.len() != n {
                return Err(Error::Dim(format!(
                    "volume mask has {} entries, expected {n}",
                    m.len()
                )));
            }
        }
        Ok(Volume { dims, voxels, mask })
    }

    pub fn voxel_count(&self) -> usize {
        self.voxels.len()
    }

    /// Voxel index for (z, y, x) in z-major order.
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.voxel_count();
        let flag = self.mask.is_some() as usize;
        let mut out = Vec::with_capacity(17 + 4 * n + n.div_ceil(8) * flag);
        out.extend_from_slice(VOLUME_MAGIC);
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(flag as u8);
        for v in &self.voxels {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(mask) = &self.mask {
            let mut byte = 0u8;
            for (i, &m) in mask.iter().enumerate() {
                if m {
                    byte |= 1 << (i % 8);
                }
                if i % 8 == 7 {
                    out.push(byte);
                    byte = 0;
                }
            }
            if n % 8 != 0 {
                out.push(byte);
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Volume> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        parse_volume(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Strict VOL1 decoder. Errors carry the byte offset of the defect.
pub fn parse_volume(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < 17 {
        return Err(Error::Format(format!(
            "truncated header: {} bytes, need 17",
            bytes.len()
        )));
    }
    if &bytes[0..4] != VOLUME_MAGIC {
        return Err(Error::Format("bad magic at byte 0 (expected VOL1)".into()));
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let off = 4 + 4 * i;
        let v = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if v == 0 || v > MAX_DIM {
            return Err(Error::Format(format!(
                "dimension {v} out of range at byte {off}"
            )));
        }
        *d = v as usize;
    }
    let flag = bytes[16];
    if flag > 1 {
        return Err(Error::Format(format!(
            "mask flag {flag} at byte 16 must be 0 or 1"
        )));
    }
    let n = dims[0] as u64 * dims[1] as u64 * dims[2] as u64;
    let mask_len = if flag == 1 { n.div_ceil(8) } else { 0 };
    let expected = 17 + 4 * n + mask_len;
    if (bytes.len() as u64) != expected {
        return Err(Error::Format(format!(
            "size mismatch: {} bytes, dims {:?} with flag {flag} require {expected}",
            bytes.len(),
            dims
        )));
    }
    let n = n as usize;
    let mut voxels = Vec::with_capacity(n);
    for i in 0..n {
        let off = 17 + 4 * i;
        voxels.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
    }
    let mask = if flag == 1 {
        let base = 17 + 4 * n;
        let mut mask = Vec::with_capacity(n);
        for i in 0..n {
            mask.push(bytes[base + i / 8] & (1 << (i % 8)) != 0);
        }
        Some(mask)
    } else {
        None
    };
    Volume::new(dims, voxels, mask)
}
