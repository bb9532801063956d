//! Binary checkpoint: magic, version, parameter records, optimizer records.
//! Each record is name length (u32), UTF-8 name, rank (u32), dims (u64 each)
//! and a little-endian f64 payload.

use std::path::Path;

use super::store::ParameterStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

pub const MAGIC: &[u8; 8] = b"WIMPCKPT";
pub const VERSION: u32 = 1;

fn put_record<S: Scalar>(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: &[S]) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
}

pub fn to_bytes<S: Scalar>(store: &ParameterStore<S>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for id in store.ids() {
        let t = store.value(id);
        put_record(&mut buf, store.name(id), &t.shape(), t.data());
    }
    let n_opt = 1 + 2 * store.len();
    buf.extend_from_slice(&(n_opt as u32).to_le_bytes());
    put_record::<S>(&mut buf, "adam.step", &[], &[S::lit(store.step as f64)]);
    for id in store.ids() {
        let name = store.name(id);
        let (m, v) = (&store.m[id.0], &store.v[id.0]);
        put_record(&mut buf, &format!("m/{name}"), &m.shape(), m.data());
        put_record(&mut buf, &format!("v/{name}"), &v.shape(), v.data());
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn record<S: Scalar>(&mut self) -> Result<(String, Vec<usize>, Vec<S>)> {
        let n = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(n)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?
            .to_string();
        let rank = self.u32()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Result<_>>()?;
        let count: usize = shape.iter().product();
        let data = (0..count)
            .map(|_| self.u64().map(|b| S::lit(f64::from_bits(b))))
            .collect::<Result<_>>()?;
        Ok((name, shape, data))
    }
}

pub fn from_bytes<S: Scalar>(buf: &[u8]) -> Result<ParameterStore<S>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut store = ParameterStore::new();
    let n = r.u32()?;
    for _ in 0..n {
        let (name, shape, data) = r.record::<S>()?;
        store.add(name, Tensor::from_shape(&shape, data)?)?;
    }
    let n_opt = r.u32()?;
    for _ in 0..n_opt {
        let (name, shape, data) = r.record::<S>()?;
        if name == "adam.step" {
            store.step = data.first().map(|v| v.to_f64_lossy() as u64).unwrap_or(0);
            continue;
        }
        let (slot, pname) = match name.split_once('/') {
            Some(("m", p)) => (0, p),
            Some(("v", p)) => (1, p),
            _ => return Err(Error::Checkpoint(format!("unknown optimizer record `{name}`"))),
        };
        let id = store
            .id(pname)
            .ok_or_else(|| Error::Checkpoint(format!("optimizer state for unknown `{pname}`")))?;
        let t = Tensor::from_shape(&shape, data)?;
        if t.shape() != store.value(id).shape() {
            return Err(Error::Checkpoint(format!("optimizer state shape for `{pname}`")));
        }
        if slot == 0 {
            store.m[id.0] = t;
        } else {
            store.v[id.0] = t;
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(store)
}

pub fn save<S: Scalar>(store: &ParameterStore<S>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(store))?;
    Ok(())
}

pub fn load<S: Scalar>(path: impl AsRef<Path>) -> Result<ParameterStore<S>> {
    from_bytes(&std::fs::read(path)?)
}
