//! Binary model files.
//!
//! Layout (all integers `u32` little-endian, floats `f64` little-endian):
//!
//! ```text
//! magic      8 bytes  "AMOCNET\0"
//! version    u32      = 1
//! dims       u32 x 5  vocab, hidden, classes, depth, n_active
//! active     u32 x n_active   original 1-based layer indices
//! freeze     ceil((4 + 2 n_active) / 8) bytes, bit i = tensor i frozen (LSB first)
//! tensors    f64 ...  embedding, (weight, bias) per active layer,
//!                     attention, head weight, head bias
//! ```

use std::path::Path;

use super::model::{Dims, EncoderLayer, LayerStackModel};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"AMOCNET\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn serialize(model: &LayerStackModel) -> Vec<u8> {
    let dims = model.dims;
    let n = model.layers.len();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [dims.vocab, dims.hidden, dims.classes, dims.depth, n] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for layer in &model.layers {
        out.extend_from_slice(&(layer.index as u32).to_le_bytes());
    }
    let mut bits = vec![0u8; model.frozen.len().div_ceil(8)];
    for (i, &f) in model.frozen.iter().enumerate() {
        if f {
            bits[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&bits);
    for id in model.param_ids() {
        for v in model.tensor(id) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<LayerStackModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::Format(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let dims = Dims {
        vocab: r.u32()?,
        hidden: r.u32()?,
        classes: r.u32()?,
        depth: r.u32()?,
    };
    dims.validate().map_err(|e| Error::Format(e.to_string()))?;
    let n = r.u32()?;
    if n == 0 || n > dims.depth {
        return Err(Error::Format(format!("{n} active layers for depth {}", dims.depth)));
    }
    let mut indices = Vec::with_capacity(n);
    for _ in 0..n {
        indices.push(r.u32()?);
    }
    if indices.windows(2).any(|w| w[0] >= w[1]) || indices.iter().any(|&i| i == 0 || i > dims.depth) {
        return Err(Error::Format(format!("invalid active layer list {indices:?}")));
    }
    let n_tensors = 4 + 2 * n;
    let bits = r.take(n_tensors.div_ceil(8))?;
    let frozen = (0..n_tensors).map(|i| bits[i / 8] & (1 << (i % 8)) != 0).collect();

    let d = dims.hidden;
    let embedding = r.f64s(dims.vocab * d)?;
    let mut layers = Vec::with_capacity(n);
    for index in indices {
        let weight = r.f64s(d * d)?;
        let bias = r.f64s(d)?;
        layers.push(EncoderLayer { index, weight, bias });
    }
    let attention = r.f64s(n)?;
    let head_weight = r.f64s(dims.classes * d)?;
    let head_bias = r.f64s(dims.classes)?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after model",
            bytes.len() - r.pos
        )));
    }
    Ok(LayerStackModel {
        dims,
        embedding,
        layers,
        attention,
        head_weight,
        head_bias,
        frozen,
    })
}

pub fn save(model: &LayerStackModel, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, serialize(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<LayerStackModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    deserialize(&bytes)
}
