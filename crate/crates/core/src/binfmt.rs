//! Shape-prefixed little-endian `f32` blocks.
//!
//! Layout: `u32` rank, `rank × u32` extents, then `Π extents` `f32` values,
//! all little-endian.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{io_err, Result};

pub fn encode(shape: &[usize], values: impl ExactSizeIterator<Item = f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * (1 + shape.len() + values.len()));
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Inverse of [`encode`]; `Err` carries a human-readable reason.
pub fn decode(bytes: &[u8]) -> std::result::Result<(Vec<usize>, Vec<f32>), String> {
    let word = |i: usize| -> std::result::Result<u32, String> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| format!("truncated header at word {i}"))
    };
    let rank = word(0)? as usize;
    if rank > 8 {
        return Err(format!("implausible rank {rank}"));
    }
    let shape: Vec<usize> = (0..rank).map(|i| word(1 + i).map(|d| d as usize)).collect::<std::result::Result<_, _>>()?;
    let numel: usize = shape.iter().product();
    let start = 4 * (1 + rank);
    let expected = start + 4 * numel;
    if bytes.len() != expected {
        return Err(format!("expected {expected} bytes for shape {shape:?}, found {}", bytes.len()));
    }
    let values = bytes[start..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((shape, values))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(io_err(path))
}
