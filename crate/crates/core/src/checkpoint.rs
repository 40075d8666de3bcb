//! Little-endian binary checkpoints.
//!
//! Layout:
//!
//! ```text
//! magic      8 bytes  "TXTVAECK"
//! version    u32      1
//! lines      u32      number of config lines
//!   len      u32      byte length, then UTF-8 "key=value"
//! params     u32      number of parameter blobs
//!   name_len u32      then UTF-8 name
//!   ndim     u32      then ndim × u64 dims
//!   data              product(dims) × f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, TextModel};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TXTVAECK";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

/// Serializes the configuration and every parameter of `model`.
pub fn to_bytes<S: Scalar>(model: &TextModel<S>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let kv = model.config.to_kv();
    put_u32(&mut out, kv.len() as u32);
    for (k, v) in &kv {
        put_str(&mut out, &format!("{k}={v}"));
    }
    put_u32(&mut out, model.params.len() as u32);
    for (name, value) in model.params.iter() {
        put_str(&mut out, name);
        put_u32(&mut out, value.shape().len() as u32);
        for &d in value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for x in value.data() {
            out.extend_from_slice(&x.as_f64().to_le_bytes());
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
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
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
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }
}

/// Rebuilds a model from [`to_bytes`] output.
pub fn from_bytes<S: Scalar>(bytes: &[u8]) -> Result<TextModel<S>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut config = ModelConfig::default();
    for _ in 0..r.u32()? {
        let line = r.string()?;
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("config line without '=': {line:?}")))?;
        config.set(k, v)?;
    }
    let mut model = TextModel::new(config)?;
    let count = r.u32()? as usize;
    if count != model.params.len() {
        return Err(Error::Format(format!("checkpoint has {count} parameters, model expects {}", model.params.len())));
    }
    for _ in 0..count {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| r.f64().map(S::c)).collect::<Result<Vec<_>>>()?;
        let id = model.params.id(&name).ok_or_else(|| Error::Format(format!("unknown parameter {name:?}")))?;
        model.params.set(id, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after parameters", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn save<S: Scalar>(model: &TextModel<S>, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(model))?;
    Ok(())
}

pub fn load<S: Scalar>(path: &Path) -> Result<TextModel<S>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
