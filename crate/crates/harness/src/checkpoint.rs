//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "CALCKPT\0"
//! version      u32       1
//! config_len   u32
//! config       config_len bytes, model config as UTF-8 JSON
//! count        u32       number of tensors
//! per tensor, in canonical parameter order:
//!   name_len   u32
//!   name       name_len bytes UTF-8, e.g. "layers.0.attn.wq"
//!   ndim       u32
//!   dims       ndim × u64
//!   data       product(dims) × f64, row-major
//! ```

use std::fs;
use std::path::Path;

use cal_core::model::{ModelConfig, ModelParams};
use cal_core::Tensor;

use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 8] = b"CALCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(config: &ModelConfig, params: &ModelParams) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(config)?;
    put_u32(&mut out, cfg.len());
    out.extend_from_slice(&cfg);
    put_u32(&mut out, params.len());
    for (name, t) in params.names().iter().zip(params.iter()) {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
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
            .ok_or_else(|| HarnessError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| HarnessError::Checkpoint(format!("extent {v} too large")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ModelConfig, ModelParams)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(HarnessError::Checkpoint("missing magic".into()));
    }
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(HarnessError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let n = r.u32()?;
    let config: ModelConfig = serde_json::from_slice(r.take(n)?)?;
    config.validate()?;
    let count = r.u32()?;
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()?;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| HarnessError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()?;
        let dims = (0..ndim).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let len: usize = dims.iter().product();
        let data = r
            .take(
                len.checked_mul(8)
                    .ok_or_else(|| HarnessError::Checkpoint("tensor too large".into()))?,
            )?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        names.push(name);
        tensors.push(Tensor::new(&dims, data)?);
    }
    if r.pos != bytes.len() {
        return Err(HarnessError::Checkpoint("trailing bytes".into()));
    }
    let params = ModelParams::from_ordered(config.n_layers, tensors)
        .ok_or_else(|| HarnessError::Checkpoint("wrong number of tensors".into()))?;
    if params.names() != names {
        return Err(HarnessError::Checkpoint("tensor names out of order".into()));
    }
    params.check(&config)?;
    Ok((config, params))
}

pub fn save(path: &Path, config: &ModelConfig, params: &ModelParams) -> Result<()> {
    fs::write(path, encode(config, params)?).map_err(HarnessError::io(path))
}

pub fn load(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    decode(&fs::read(path).map_err(HarnessError::io(path))?)
}
