//! Binary weight files.
//!
//! Layout (all integers little-endian `u32` unless noted):
//!
//! ```text
//! "CTPW" | version | layer count
//! per layer: kind tag (u8) | tensor count | per tensor: rank | dims... | f32 LE data
//! ```
//!
//! Layers appear in network node order; parameter-free layers carry zero
//! tensors. Batch-norm layers store gamma, beta, running mean, running var.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::network::Network;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CTPW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredLayer {
    pub kind: u8,
    pub tensors: Vec<Tensor>,
}

pub fn encode(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(net.len() as u32).to_le_bytes());
    for layer in net.layers() {
        out.push(layer.spec.kind_tag());
        let tensors: Vec<&Tensor> = layer.tensors().collect();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
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
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| NnError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<StoredLayer>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(NnError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(NnError::Format(format!(
            "unsupported version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let count = r.u32()? as usize;
    let mut layers = Vec::new();
    for _ in 0..count {
        let kind = r.take(1)?[0];
        let nt = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..nt {
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| NnError::Format("tensor too large".into()))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(Tensor::new(shape, data)?);
        }
        layers.push(StoredLayer { kind, tensors });
    }
    if r.pos != bytes.len() {
        return Err(NnError::Format(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(layers)
}

pub fn save_weights(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&encode(net))?;
    w.flush()?;
    Ok(())
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<Vec<StoredLayer>> {
    decode(&fs::read(path)?)
}

/// Copies stored tensors into `net`, which must have the same architecture.
pub fn apply_weights(net: &mut Network, stored: Vec<StoredLayer>) -> Result<()> {
    if stored.len() != net.len() {
        return Err(NnError::Shape(format!(
            "file has {} layers, network has {}",
            stored.len(),
            net.len()
        )));
    }
    for (i, (layer, s)) in net.layers().zip(&stored).enumerate() {
        if layer.spec.kind_tag() != s.kind {
            return Err(NnError::Shape(format!(
                "layer {i}: file kind {} but network has {}",
                s.kind,
                layer.spec.name()
            )));
        }
        let expected: Vec<&Tensor> = layer.tensors().collect();
        if expected.len() != s.tensors.len()
            || expected
                .iter()
                .zip(&s.tensors)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(NnError::Shape(format!("layer {i}: tensor shapes differ")));
        }
    }
    for (layer, s) in net.layers_mut().zip(stored) {
        for (dst, src) in layer.tensors_mut().zip(s.tensors) {
            *dst = src;
        }
    }
    Ok(())
}

pub fn load_weights(net: &mut Network, path: impl AsRef<Path>) -> Result<()> {
    apply_weights(net, read_weights(path)?)
}
