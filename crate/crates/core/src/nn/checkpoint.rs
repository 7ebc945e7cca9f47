//! Binary parameter checkpoints.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "ILABCKPT"
//! version      u32      1
//! seed         u64
//! digest_len   u32
//! digest       digest_len bytes, UTF-8
//! temperature  f64
//! count        u32      number of tensors
//! count times:
//!   name_len   u32
//!   name       name_len bytes, UTF-8, e.g. "encoder.0.weight"
//!   rows       u64
//!   cols       u64
//! values       f64 * sum(rows * cols), tensors in header order, row-major
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::model::{Linear, Mlp, ModelParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ILABCKPT";
pub const VERSION: u32 = 1;

const PREFIXES: [&str; 4] = ["encoder", "proj_head", "order_head", "perm_head"];

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub digest: String,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.params.tensors();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.digest.len() as u32).to_le_bytes());
        out.extend_from_slice(self.digest.as_bytes());
        out.extend_from_slice(&self.params.temperature.to_le_bytes());
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in &tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
        }
        for (_, t) in &tensors {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::BadCheckpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::BadCheckpoint(format!("unsupported version {version}")));
        }
        let seed = r.u64()?;
        let digest = r.string()?;
        let temperature = r.f64()?;
        let count = r.u32()? as usize;
        let mut header = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            header.push((name, rows, cols));
        }
        let mut tensors = Vec::with_capacity(count);
        for (name, rows, cols) in header {
            let values = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let t = Array2::from_shape_vec((rows, cols), values).expect("length matches header");
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::BadCheckpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let params = assemble(tensors, temperature)?;
        Ok(Checkpoint { seed, digest, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::CheckpointNotFound(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn assemble(tensors: Vec<(String, Array2<f64>)>, temperature: f64) -> Result<ModelParams> {
    let mut mlps: Vec<Mlp> = PREFIXES.iter().map(|_| Mlp { layers: Vec::new() }).collect();
    let mut iter = tensors.into_iter();
    while let Some((wname, weight)) = iter.next() {
        let (bname, bias) = iter.next().ok_or_else(|| Error::BadCheckpoint(format!("{wname} has no bias")))?;
        let (prefix, layer) = parse_name(&wname, "weight")?;
        if parse_name(&bname, "bias")? != (prefix, layer) {
            return Err(Error::BadCheckpoint(format!("{bname} does not follow {wname}")));
        }
        let slot = PREFIXES.iter().position(|p| *p == prefix).expect("parse_name checks prefix");
        if layer != mlps[slot].layers.len() {
            return Err(Error::BadCheckpoint(format!("{wname} out of order")));
        }
        if bias.dim() != (1, weight.ncols()) {
            return Err(Error::BadCheckpoint(format!("{bname} has shape {:?}", bias.dim())));
        }
        mlps[slot].layers.push(Linear { weight, bias });
    }
    let mut it = mlps.into_iter();
    let params = ModelParams {
        encoder: it.next().unwrap(),
        proj_head: it.next().unwrap(),
        order_head: it.next().unwrap(),
        perm_head: it.next().unwrap(),
        temperature,
    };
    for (name, mlp) in PREFIXES.iter().zip([&params.encoder, &params.proj_head, &params.order_head, &params.perm_head])
    {
        if mlp.layers.is_empty() {
            return Err(Error::BadCheckpoint(format!("missing {name}")));
        }
        if mlp.layers.windows(2).any(|w| w[0].output_dim() != w[1].input_dim()) {
            return Err(Error::BadCheckpoint(format!("{name} layer widths do not chain")));
        }
    }
    if !params.is_finite() || !(temperature > 0.0) {
        return Err(Error::BadCheckpoint("non-finite parameters or temperature".into()));
    }
    Ok(params)
}

fn parse_name<'a>(name: &'a str, kind: &str) -> Result<(&'a str, usize)> {
    let bad = || Error::BadCheckpoint(format!("unexpected tensor name {name:?}"));
    let mut parts = name.split('.');
    let (Some(prefix), Some(idx), Some(k), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(bad());
    };
    if k != kind || !PREFIXES.contains(&prefix) {
        return Err(bad());
    }
    Ok((prefix, idx.parse().map_err(|_| bad())?))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::BadCheckpoint("truncated".into()))?;
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

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::BadCheckpoint("name is not UTF-8".into()))
    }
}
