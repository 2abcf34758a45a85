//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DSFG"            4-byte magic
//! version           u32 (currently 1)
//! param count       u32
//! records...        name_len u32, UTF-8 name, rank u32, dims u64 × rank, f32 × prod(dims)
//! has optimizer     u8 (0 or 1)
//! [step u64, first-moment count u32, records..., second-moment count u32, records...]
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::params::{Moments, ParamSet};
use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DSFG";
pub const VERSION: u32 = 1;

fn put_record<T: Real>(out: &mut Vec<u8>, name: &str, t: &Tensor4<T>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&4u32.to_le_bytes());
    for d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
    }
}

pub fn encode<T: Real>(params: &ParamSet<T>, with_optimizer: bool) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        put_record(&mut out, name, t);
    }
    out.push(with_optimizer as u8);
    if with_optimizer {
        out.extend_from_slice(&params.step().to_le_bytes());
        let moments: Vec<_> = params.moments().collect();
        out.extend_from_slice(&(moments.len() as u32).to_le_bytes());
        for (name, m) in &moments {
            put_record(&mut out, name, &m.first);
        }
        out.extend_from_slice(&(moments.len() as u32).to_le_bytes());
        for (name, m) in &moments {
            put_record(&mut out, name, &m.second);
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
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated {
                expected: self.pos + n,
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
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

    fn record(&mut self) -> Result<(String, Tensor4<f32>)> {
        let len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|e| Error::invalid(format!("parameter name is not UTF-8: {e}")))?
            .to_string();
        let rank = self.u32()? as usize;
        if rank > 4 {
            return Err(Error::invalid(format!("parameter `{name}` has rank {rank} > 4")));
        }
        let mut shape = [1usize; 4];
        for i in 0..rank {
            shape[4 - rank + i] = self.u64()? as usize;
        }
        let n: usize = shape.iter().product();
        let bytes = self.take(n * 4)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok((name, Tensor4::from_vec(shape, data)?))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamSet<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::BadMagic("checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let mut params = ParamSet::new();
    for _ in 0..r.u32()? {
        let (name, t) = r.record()?;
        params.insert(name, t);
    }
    if r.u8()? == 1 {
        let step = r.u64()?;
        let mut firsts = BTreeMap::new();
        for _ in 0..r.u32()? {
            let (name, t) = r.record()?;
            firsts.insert(name, t);
        }
        let mut moments = BTreeMap::new();
        for _ in 0..r.u32()? {
            let (name, second) = r.record()?;
            let first = firsts
                .remove(&name)
                .ok_or_else(|| Error::invalid(format!("second moment without first for `{name}`")))?;
            moments.insert(name, Moments { first, second });
        }
        params.restore_state(step, moments)?;
    }
    Ok(params)
}

pub fn save<T: Real>(path: &Path, params: &ParamSet<T>) -> Result<()> {
    std::fs::write(path, encode(params, true)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParamSet<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
