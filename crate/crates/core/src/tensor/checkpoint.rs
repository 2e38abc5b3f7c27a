//! The `MDNW` parameter file.
//!
//! Layout: `b"MDNW"`, a version byte, then records until end of file. A record
//! is a u32 BE name length, the UTF-8 name, a dtype byte, a rank byte, `rank`
//! u32 BE dims and the elements as little-endian bytes.

use std::path::Path;

use super::array::{DType, Real};
use super::layers::ParamStore;
use super::TensorError;

pub const MAGIC: &[u8; 4] = b"MDNW";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<usize>,
    /// Raw little-endian element bytes.
    pub bytes: Vec<u8>,
}

impl Record {
    pub fn bytes_record(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Record { name: name.into(), dtype: DType::U8, dims: vec![bytes.len()], bytes }
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn to_values<F: Real>(&self) -> Result<Vec<F>, TensorError> {
        let width = self.dtype.size();
        let vals = match self.dtype {
            DType::F32 => self.bytes.chunks_exact(width).map(|c| F::of(f32::read_le(c) as f64)).collect(),
            DType::F64 => self.bytes.chunks_exact(width).map(|c| F::of(f64::read_le(c))).collect(),
            DType::U8 => {
                return Err(TensorError::Checkpoint(format!("{} holds bytes, not numbers", self.name)));
            }
        };
        Ok(vals)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub records: Vec<Record>,
}

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorError> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| bad("truncated"))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TensorError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    /// Records for every parameter, under `prefix.` + name.
    pub fn push_store<F: Real>(&mut self, prefix: &str, store: &ParamStore<F>) {
        for p in store.iter() {
            let mut bytes = Vec::with_capacity(p.value.len() * F::DTYPE.size());
            for &v in p.value.data() {
                v.write_le(&mut bytes);
            }
            let name = if prefix.is_empty() { p.name.clone() } else { format!("{prefix}.{}", p.name) };
            self.records.push(Record { name, dtype: F::DTYPE, dims: p.dims.clone(), bytes });
        }
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    /// Overwrite every parameter of `store` from the matching records.
    pub fn load_store<F: Real>(&self, prefix: &str, store: &mut ParamStore<F>) -> Result<(), TensorError> {
        for p in store.iter_mut() {
            let name = if prefix.is_empty() { p.name.clone() } else { format!("{prefix}.{}", p.name) };
            let r = self.get(&name).ok_or_else(|| bad(format!("missing parameter {name}")))?;
            if r.dims != p.dims {
                return Err(bad(format!("{name}: stored dims {:?}, model expects {:?}", r.dims, p.dims)));
            }
            let vals = r.to_values::<F>()?;
            p.value.data_mut().copy_from_slice(&vals);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, TensorError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        for r in &self.records {
            let name = r.name.as_bytes();
            let name_len = u32::try_from(name.len()).map_err(|_| bad("name too long"))?;
            let rank = u8::try_from(r.dims.len()).map_err(|_| bad(format!("{}: rank too large", r.name)))?;
            if r.numel() * r.dtype.size() != r.bytes.len() {
                return Err(bad(format!("{}: byte count does not match dims", r.name)));
            }
            out.extend_from_slice(&name_len.to_be_bytes());
            out.extend_from_slice(name);
            out.push(r.dtype as u8);
            out.push(rank);
            for &d in &r.dims {
                let d = u32::try_from(d).map_err(|_| bad(format!("{}: dim too large", r.name)))?;
                out.extend_from_slice(&d.to_be_bytes());
            }
            out.extend_from_slice(&r.bytes);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        if bytes.len() < 5 || &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        if bytes[4] != VERSION {
            return Err(bad(format!("unsupported version {}", bytes[4])));
        }
        let mut cur = Cursor { bytes, pos: 5 };
        let mut records = Vec::new();
        while cur.pos < bytes.len() {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?).map_err(|_| bad("name is not UTF-8"))?.to_owned();
            let dtype = DType::from_byte(cur.take(1)?[0]).ok_or_else(|| bad(format!("{name}: unknown dtype")))?;
            let rank = cur.take(1)?[0] as usize;
            let dims = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n = dims.iter().product::<usize>() * dtype.size();
            let data = cur.take(n)?.to_vec();
            records.push(Record { name, dtype, dims, bytes: data });
        }
        Ok(Checkpoint { records })
    }

    pub fn save(&self, path: &Path) -> Result<(), TensorError> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, TensorError> {
        let bytes = std::fs::read(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Checkpoint::from_bytes(&bytes)
    }
}
