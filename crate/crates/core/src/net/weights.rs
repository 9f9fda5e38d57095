//! `LMNW` weight files, little-endian:
//!
//! ```text
//! "LMNW" | u32 version = 1 | u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u8 rank | u32 dims[rank] | f32 data
//! ```
//!
//! Tensors are named `<layer>.weight` and `<layer>.bias` after
//! [`LAYER_NAMES`](super::LAYER_NAMES), in layer order.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::params::{LMNetParams, NetConfig, CONTEXT, ENC1};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"LMNW";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn encode_weights(params: &LMNetParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.parameter_count() * 4);
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(2 * params.layers.len() as u32).to_le_bytes());
    for layer in &params.layers {
        for (suffix, t) in [("weight", &layer.weight), ("bias", &layer.bias)] {
            let name = format!("{}.{suffix}", layer.name);
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Corruption(format!(
                    "weight file truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<LMNetParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic").ok() != Some(WEIGHTS_MAGIC.as_slice()) {
        return Err(Error::Format("not an LMNW weight file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!(
            "unsupported weight file version {version}, expected {WEIGHTS_VERSION}"
        )));
    }
    let count = r.u32("tensor count")?;
    let mut tensors: HashMap<String, Tensor> = HashMap::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::Corruption("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Corruption(format!("tensor `{name}` shape {shape:?} overflows")))?;
        let data = r
            .take(n, &name)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.insert(name, Tensor::from_vec(&shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Corruption(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }

    let dim0 = |name: &str| -> Result<usize> {
        tensors
            .get(name)
            .and_then(|t| t.shape().first().copied())
            .ok_or_else(|| Error::Format(format!("weight file lacks tensor `{name}`")))
    };
    let template = LMNetParams::zeros(NetConfig {
        encoder_width: dim0(&format!("{}.weight", super::LAYER_NAMES[ENC1]))?,
        context_width: dim0(&format!("{}.weight", super::LAYER_NAMES[CONTEXT]))?,
        ..NetConfig::default()
    })?;
    let mut params = template.clone();
    for layer in &mut params.layers {
        for (suffix, slot) in [("weight", &mut layer.weight), ("bias", &mut layer.bias)] {
            let name = format!("{}.{suffix}", layer.name);
            let t = tensors
                .remove(&name)
                .ok_or_else(|| Error::Format(format!("weight file lacks tensor `{name}`")))?;
            if t.shape() != slot.shape() {
                return Err(Error::ShapeMismatch {
                    name,
                    expected: slot.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            *slot = t;
        }
    }
    if let Some(extra) = tensors.keys().min() {
        return Err(Error::Format(format!("unknown tensor `{extra}` in weight file")));
    }
    Ok(params)
}

pub fn save_weights(params: &LMNetParams, path: &Path) -> Result<()> {
    fs::write(path, encode_weights(params))?;
    Ok(())
}

/// Loads a weight file; network widths are taken from the file.
pub fn load_weights(path: &Path) -> Result<LMNetParams> {
    decode_weights(&fs::read(path)?)
}
