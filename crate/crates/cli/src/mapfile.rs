//! `LMFV` frontal-view map files, little-endian:
//!
//! ```text
//! "LMFV" | u32 version = 1 | u32 H | u32 W | f32 channels[5][H][W] | u8 valid[H][W]
//! ```

use std::fs;
use std::path::Path;

use lmnet::geom::{FrontalViewMap, FEATURE_CHANNELS};
use lmnet::tensor::Tensor;
use lmnet::{Error, Result};

pub const MAP_MAGIC: &[u8; 4] = b"LMFV";
pub const MAP_VERSION: u32 = 1;
const HEADER: usize = 16;

pub fn encode_map(map: &FrontalViewMap) -> Vec<u8> {
    let (h, w) = (map.height(), map.width());
    let mut out = Vec::with_capacity(HEADER + (FEATURE_CHANNELS * 4 + 1) * h * w);
    out.extend_from_slice(MAP_MAGIC);
    for v in [MAP_VERSION, h as u32, w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in map.channels().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(map.validity().iter().map(|&v| v as u8));
    out
}

pub fn decode_map(bytes: &[u8]) -> Result<FrontalViewMap> {
    if bytes.len() < 4 || &bytes[..4] != MAP_MAGIC {
        return Err(Error::Format("not an LMFV map file (bad magic)".into()));
    }
    if bytes.len() < HEADER {
        return Err(Error::Corruption(format!(
            "map header truncated at {} bytes",
            bytes.len()
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    if word(1) != MAP_VERSION {
        return Err(Error::Format(format!("unsupported LMFV version {}", word(1))));
    }
    let (h, w) = (word(2) as usize, word(3) as usize);
    let cells = h
        .checked_mul(w)
        .ok_or_else(|| Error::Corruption(format!("map size {h}x{w} overflows")))?;
    let expected = cells
        .checked_mul(FEATURE_CHANNELS * 4 + 1)
        .and_then(|n| n.checked_add(HEADER))
        .ok_or_else(|| Error::Corruption(format!("map size {h}x{w} overflows")))?;
    if bytes.len() != expected {
        return Err(Error::Corruption(format!(
            "{h}x{w} map needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let floats = FEATURE_CHANNELS * cells;
    let data: Vec<f32> = bytes[HEADER..HEADER + 4 * floats]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let valid = bytes[HEADER + 4 * floats..]
        .iter()
        .enumerate()
        .map(|(i, &b)| match b {
            0 | 1 => Ok(b == 1),
            _ => Err(Error::Corruption(format!("validity byte {b} at cell {i}"))),
        })
        .collect::<Result<Vec<bool>>>()?;
    for (cell, &v) in valid.iter().enumerate() {
        if !v && (0..FEATURE_CHANNELS).any(|c| data[c * cells + cell] != 0.0) {
            return Err(Error::Corruption(format!("invalid cell {cell} holds nonzero features")));
        }
    }
    FrontalViewMap::from_parts(Tensor::from_vec(&[FEATURE_CHANNELS, h, w], data)?, valid)
}

pub fn write_map(path: &Path, map: &FrontalViewMap) -> Result<()> {
    fs::write(path, encode_map(map))?;
    Ok(())
}

pub fn read_map(path: &Path) -> Result<FrontalViewMap> {
    decode_map(&fs::read(path)?)
}
