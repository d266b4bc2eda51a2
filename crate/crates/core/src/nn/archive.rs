//! Checkpoint archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "HDCKPT01"
//! count   u32      number of tensors
//! repeated count times:
//!   name_len  u32, name  utf-8 bytes
//!   trainable u8 (0 or 1)
//!   ndim      u32, dims  u64 x ndim
//!   data      f64 x prod(dims), row-major
//! ```

use std::fs;
use std::path::Path;

use super::params::{TensorMut, TensorRef};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HDCKPT01";

#[derive(Clone, Debug, PartialEq)]
pub struct ArchivedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub data: Vec<f64>,
}

pub fn encode(tensors: &[TensorRef<'_>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend((tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend((t.name.len() as u32).to_le_bytes());
        out.extend(t.name.as_bytes());
        out.push(t.trainable as u8);
        out.extend((t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend((d as u64).to_le_bytes());
        }
        for v in t.data {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8], path: &Path) -> Result<Vec<ArchivedTensor>> {
    let bad = |what: &str| Error::format(path, format!("truncated or corrupt checkpoint ({what})"));
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8) != Some(MAGIC.as_slice()) {
        return Err(Error::format(path, "bad checkpoint magic"));
    }
    let count = c.u32().ok_or_else(|| bad("count"))?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = c.u32().ok_or_else(|| bad("name length"))? as usize;
        let name = String::from_utf8(c.take(len).ok_or_else(|| bad("name"))?.to_vec())
            .map_err(|_| bad("name utf-8"))?;
        let trainable = c.take(1).ok_or_else(|| bad("flag"))?[0] != 0;
        let ndim = c.u32().ok_or_else(|| bad("ndim"))? as usize;
        let shape: Vec<usize> = (0..ndim)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Option<_>>()
            .ok_or_else(|| bad("dims"))?;
        let n: usize = shape.iter().product();
        let data = c
            .take(n * 8)
            .ok_or_else(|| bad("data"))?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push(ArchivedTensor {
            name,
            shape,
            trainable,
            data,
        });
    }
    if c.pos != buf.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}

pub fn write(path: &Path, tensors: &[TensorRef<'_>]) -> Result<()> {
    fs::write(path, encode(tensors)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<ArchivedTensor>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf, path)
}

/// Copies archived values into matching tensors; names and shapes must agree.
pub fn load_into(targets: Vec<TensorMut<'_>>, archived: &[ArchivedTensor], path: &Path) -> Result<()> {
    if targets.len() != archived.len() {
        return Err(Error::format(
            path,
            format!("checkpoint has {} tensors, model expects {}", archived.len(), targets.len()),
        ));
    }
    for (t, a) in targets.into_iter().zip(archived) {
        if t.name != a.name || t.shape != a.shape {
            return Err(Error::format(
                path,
                format!("tensor {} {:?} does not match {} {:?}", a.name, a.shape, t.name, t.shape),
            ));
        }
        t.data.copy_from_slice(&a.data);
    }
    Ok(())
}
