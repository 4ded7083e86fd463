//! `LLT1` tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LLT1"  u32 record_count
//! per record:
//!   u16 name_len, name bytes (UTF-8)
//!   u8 dtype (1 = f32, 2 = f64), u8 ndim, ndim x u32 dims
//!   payload: product(dims) values, row-major
//! ```

use std::collections::HashSet;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::scalar::{Dtype, Scalar};
use crate::tensor::Mat;

pub const MAGIC: &[u8; 4] = b"LLT1";

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values converted to `T` (exact when `T` is the stored type).
    pub fn to_vec<T: Scalar>(&self) -> Vec<T> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| T::lit(f64::from(x))).collect(),
            TensorData::F64(v) => v.iter().map(|&x| T::lit(x)).collect(),
        }
    }

    pub fn from_slice<T: Scalar>(values: &[T]) -> Self {
        match T::DTYPE {
            Dtype::F32 => TensorData::F32(values.iter().map(|x| x.as_f64() as f32).collect()),
            Dtype::F64 => TensorData::F64(values.iter().map(|x| x.as_f64()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: TensorData,
}

impl TensorRecord {
    pub fn new(name: impl Into<String>, dims: Vec<u32>, data: TensorData) -> Result<Self> {
        let name = name.into();
        if name.len() > usize::from(u16::MAX) {
            return Err(Error::format("record name longer than 65535 bytes"));
        }
        if dims.len() > usize::from(u8::MAX) {
            return Err(Error::format("record has more than 255 dimensions"));
        }
        let count = element_count(&dims).ok_or_else(|| Error::format("record dims overflow"))?;
        if count != data.len() {
            return Err(Error::format(format!(
                "record `{name}` has dims {dims:?} but {} values",
                data.len()
            )));
        }
        Ok(Self { name, dims, data })
    }

    pub fn from_mat<T: Scalar>(name: impl Into<String>, m: &Mat<T>) -> Result<Self> {
        let dims = vec![to_u32(m.rows())?, to_u32(m.cols())?];
        Self::new(name, dims, TensorData::from_slice(m.as_slice()))
    }

    /// Interprets a 2-D record as a matrix.
    pub fn to_mat<T: Scalar>(&self) -> Result<Mat<T>> {
        match self.dims[..] {
            [r, c] => Mat::from_vec(r as usize, c as usize, self.data.to_vec()),
            _ => Err(Error::format(format!(
                "record `{}` has {} dims, expected 2",
                self.name,
                self.dims.len()
            ))),
        }
    }
}

fn to_u32(x: usize) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::format(format!("dimension {x} exceeds u32")))
}

fn element_count(dims: &[u32]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
}

/// Ordered collection of uniquely named records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorDump {
    records: Vec<TensorRecord>,
}

impl TensorDump {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[TensorRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: TensorRecord) -> Result<()> {
        if self.get(&record.name).is_some() {
            return Err(Error::format(format!("duplicate record name `{}`", record.name)));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&TensorRecord> {
        self.get(name)
            .ok_or_else(|| Error::format(format!("missing record `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        // Vec<u8> writes are infallible
        out.write_u32::<LittleEndian>(self.records.len() as u32).unwrap();
        for r in &self.records {
            out.write_u16::<LittleEndian>(r.name.len() as u16).unwrap();
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.data.dtype().tag());
            out.push(r.dims.len() as u8);
            for &d in &r.dims {
                out.write_u32::<LittleEndian>(d).unwrap();
            }
            match &r.data {
                TensorData::F32(v) => v.iter().for_each(|&x| out.write_f32::<LittleEndian>(x).unwrap()),
                TensorData::F64(v) => v.iter().for_each(|&x| out.write_f64::<LittleEndian>(x).unwrap()),
            }
        }
        out
    }

    /// Parses a complete container; truncation, trailing bytes, unknown
    /// dtypes, invalid names and duplicate names are all rejected.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = |_| Error::format("truncated tensor dump");
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::format("bad magic, not an LLT1 file"));
        }
        let count = cur.read_u32::<LittleEndian>().map_err(truncated)?;
        let mut seen = HashSet::new();
        let mut records = Vec::new();
        for _ in 0..count {
            let name_len = cur.read_u16::<LittleEndian>().map_err(truncated)? as usize;
            let mut name = vec![0u8; name_len.min(remaining(&cur))];
            if name.len() < name_len {
                return Err(Error::format("truncated tensor dump"));
            }
            cur.read_exact(&mut name).map_err(truncated)?;
            let name = String::from_utf8(name).map_err(|_| Error::format("record name is not UTF-8"))?;
            if !seen.insert(name.clone()) {
                return Err(Error::format(format!("duplicate record name `{name}`")));
            }
            let tag = cur.read_u8().map_err(truncated)?;
            let dtype = Dtype::from_tag(tag).ok_or_else(|| Error::format(format!("unknown dtype tag {tag}")))?;
            let ndim = cur.read_u8().map_err(truncated)? as usize;
            let dims = (0..ndim)
                .map(|_| cur.read_u32::<LittleEndian>().map_err(truncated))
                .collect::<Result<Vec<_>>>()?;
            let count = element_count(&dims).ok_or_else(|| Error::format("record dims overflow"))?;
            let bytes_needed = count
                .checked_mul(dtype.size())
                .ok_or_else(|| Error::format("record payload overflow"))?;
            if bytes_needed > remaining(&cur) {
                return Err(Error::format(format!("payload of `{name}` is truncated")));
            }
            let data = match dtype {
                Dtype::F32 => {
                    let mut v = vec![0f32; count];
                    cur.read_f32_into::<LittleEndian>(&mut v).map_err(truncated)?;
                    TensorData::F32(v)
                }
                Dtype::F64 => {
                    let mut v = vec![0f64; count];
                    cur.read_f64_into::<LittleEndian>(&mut v).map_err(truncated)?;
                    TensorData::F64(v)
                }
            };
            records.push(TensorRecord { name, dims, data });
        }
        if remaining(&cur) != 0 {
            return Err(Error::format("trailing bytes after last record"));
        }
        Ok(Self { records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn remaining(cur: &Cursor<&[u8]>) -> usize {
    cur.get_ref().len().saturating_sub(cur.position() as usize)
}
