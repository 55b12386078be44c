//! Checkpoint container: magic, format version (u32), a length-prefixed
//! canonical JSON header (config snapshot and build version), then each
//! parameter as (name, shape, little-endian f64 payload), then the optional
//! optimizer state in the same layout.

use std::collections::BTreeMap;
use std::path::Path;

use mocha_core::model::{ModelConfig, Parameters};
use mocha_core::optim::AdamState;
use mocha_core::Array;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::jsonl::canonical_json;

pub const MAGIC: &[u8; 8] = b"MOCHACKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: String,
    pub config: RunConfig,
    pub model: ModelConfig,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Parameters,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    /// Errors unless the parameters fit `model` exactly.
    pub fn check_model(&self, model: &ModelConfig) -> Result<()> {
        if model.vocab_size != self.header.model.vocab_size || model.input_dim != self.header.model.input_dim {
            return Err(Error::config(format!(
                "checkpoint has vocab_size {} and input_dim {}, expected {} and {}",
                self.header.model.vocab_size, self.header.model.input_dim, model.vocab_size, model.input_dim
            )));
        }
        Ok(self.params.check_against(model)?)
    }
}

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, x: u64) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_arrays(out: &mut Vec<u8>, map: &BTreeMap<String, Array>) {
    put_u32(out, map.len() as u32);
    for (name, a) in map {
        put_u32(out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(out, a.shape().len() as u32);
        for &d in a.shape() {
            put_u64(out, d as u64);
        }
        for &x in a.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    let header = canonical_json(&ckpt.header)?;
    put_u64(&mut out, header.len() as u64);
    out.extend_from_slice(header.as_bytes());
    put_arrays(&mut out, &ckpt.params.map);
    match &ckpt.adam {
        None => out.push(0),
        Some(s) => {
            out.push(1);
            put_u64(&mut out, s.step);
            put_arrays(&mut out, &s.m);
            put_arrays(&mut out, &s.v);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::corrupt("checkpoint", format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, x: u64) -> Result<usize> {
        let n = usize::try_from(x).map_err(|_| Error::corrupt("checkpoint", "length overflow"))?;
        if n > self.buf.len() - self.pos {
            return Err(Error::corrupt("checkpoint", format!("length {n} exceeds remaining bytes")));
        }
        Ok(n)
    }

    fn arrays(&mut self) -> Result<BTreeMap<String, Array>> {
        let count = self.u32()?;
        let mut map = BTreeMap::new();
        for _ in 0..count {
            let n = self.u32()? as u64;
            let n = self.len(n)?;
            let name = std::str::from_utf8(self.take(n)?)
                .map_err(|_| Error::corrupt("checkpoint", "parameter name is not UTF-8"))?
                .to_string();
            let ndim = self.u32()?;
            let mut shape = Vec::with_capacity(ndim as usize);
            for _ in 0..ndim {
                let d = self.u64()?;
                shape.push(usize::try_from(d).map_err(|_| Error::corrupt("checkpoint", "dimension overflow"))?);
            }
            let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let bytes = numel
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| Error::corrupt("checkpoint", format!("{name}: shape overflow")))?;
            let bytes = self.len(bytes as u64)?;
            let data: Vec<f64> =
                self.take(bytes)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let a = Array::new(&shape, data).map_err(|e| Error::corrupt("checkpoint", e.to_string()))?;
            if map.insert(name.clone(), a).is_some() {
                return Err(Error::corrupt("checkpoint", format!("duplicate parameter {name}")));
            }
        }
        Ok(map)
    }
}

pub fn decode(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::corrupt("checkpoint", "bad magic bytes"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::corrupt("checkpoint", format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let n = r.u64()?;
    let n = r.len(n)?;
    let header: CheckpointHeader =
        serde_json::from_slice(r.take(n)?).map_err(|e| Error::corrupt("checkpoint", format!("header: {e}")))?;
    let params = Parameters { map: r.arrays()? };
    let adam = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let m = r.arrays()?;
            let v = r.arrays()?;
            Some(AdamState { step, m, v })
        }
        x => return Err(Error::corrupt("checkpoint", format!("bad optimizer flag {x}"))),
    };
    if r.pos != buf.len() {
        return Err(Error::corrupt("checkpoint", format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let ckpt = Checkpoint { header, params, adam };
    ckpt.params.check_against(&ckpt.header.model).map_err(|e| Error::corrupt("checkpoint", e.to_string()))?;
    Ok(ckpt)
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode(ckpt)?;
    std::fs::write(path, bytes).map_err(Error::io(path))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode(&bytes)
}
