//! Binary checkpoint file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "QTCKPT\0\0"
//! version      u32       CHECKPOINT_VERSION
//! step         u64       optimizer steps taken
//! config_len   u32       then config_len bytes of JSON (ModelConfig)
//! n_tensors    u32
//! per tensor:
//!   name_len   u32, then name_len bytes of UTF-8
//!   ndims      u32, then ndims x u64 dimensions
//!   data       product(dims) x f32, row-major
//! ```
//!
//! Tensors appear in [`TransformerParams::tensors`] order. Values are stored
//! as f32, so a reload reproduces parameters to f32 precision.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{create_file, open_file};
use crate::nmt::params::{ModelConfig, TransformerParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"QTCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: TransformerParams,
    pub step: u64,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint(w: &mut impl Write, params: &TransformerParams, step: u64) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&step.to_le_bytes())?;
    let cfg = serde_json::to_vec(&params.config)?;
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(&cfg)?;
    let tensors = params.tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in t.data {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0; 4];
    r.read_exact(&mut b).map_err(|_| bad("truncated file"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0; 8];
    r.read_exact(&mut b).map_err(|_| bad("truncated file"))?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut b = vec![0; n];
    r.read_exact(&mut b).map_err(|_| bad("truncated file"))?;
    Ok(b)
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    if read_bytes(r, 8)? != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let step = read_u64(r)?;
    let cfg_len = read_u32(r)? as usize;
    let config: ModelConfig =
        serde_json::from_slice(&read_bytes(r, cfg_len)?).map_err(|e| bad(format!("config: {e}")))?;
    config.validate().map_err(|e| bad(e.to_string()))?;
    let mut params = TransformerParams::init(config, 0)?;
    let expected: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
    let n = read_u32(r)? as usize;
    if n != expected.len() {
        return Err(bad(format!("expected {} tensors, found {n}", expected.len())));
    }
    for ((name, shape), (_, dst)) in expected.iter().zip(params.tensors_mut()) {
        let len = read_u32(r)? as usize;
        let got = String::from_utf8(read_bytes(r, len)?).map_err(|_| bad("tensor name is not UTF-8"))?;
        if &got != name {
            return Err(bad(format!("expected tensor {name}, found {got}")));
        }
        let ndims = read_u32(r)? as usize;
        let dims = (0..ndims).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return Err(bad(format!("tensor {name} has shape {dims:?}, expected {shape:?}")));
        }
        let raw = read_bytes(r, dst.len() * 4)?;
        for (d, c) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
        }
    }
    if let Some(name) = params.first_non_finite() {
        return Err(bad(format!("non-finite values in {name}")));
    }
    Ok(Checkpoint { params, step })
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(create_file(path.as_ref())?);
        write_checkpoint(&mut w, &self.params, self.step)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_checkpoint(&mut BufReader::new(open_file(path.as_ref())?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_to_f32_precision() {
        let p = TransformerParams::init(ModelConfig::toy(11, 13), 4).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p, 77).unwrap();
        let ck = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(ck.step, 77);
        assert_eq!(ck.params.config, p.config);
        for (a, b) in p.tensors().iter().zip(ck.params.tensors()) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.data.iter().zip(b.data) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        // a second save of the reloaded params is byte-identical
        let mut again = Vec::new();
        write_checkpoint(&mut again, &ck.params, 77).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_corruption() {
        let p = TransformerParams::init(ModelConfig::toy(6, 6), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p, 0).unwrap();
        assert!(read_checkpoint(&mut &buf[..buf.len() - 3]).is_err());
        let mut wrong = buf.clone();
        wrong[8] = 9;
        assert!(matches!(read_checkpoint(&mut wrong.as_slice()), Err(Error::Checkpoint(_))));
        assert!(read_checkpoint(&mut &b"garbage!"[..]).is_err());
    }
}
