//! BNKT binary tensor container.
//!
//! ```text
//! offset  size       field
//! 0       4          magic "BNKT" (42 4E 4B 54)
//! 4       4          version, u32 LE (= 1)
//! 8       1          dtype, 0 = f32, 1 = f64
//! 9       4          rank, u32 LE
//! 13      4 * rank   dims, u32 LE each
//! ...     numel * s  row-major little-endian scalars
//! ```
//!
//! A file may hold several records back to back; checkpoints use that.
//! Tensors are rank 4 in memory, so lower-rank records are left-padded with
//! unit dims on read and records are always written with rank 4.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"BNKT";
pub const VERSION: u32 = 1;

/// A decoded record in whichever precision it was stored.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> Shape {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Converts to `T`; exact when the stored precision is `T` or narrower.
    pub fn into_tensor<T: Scalar>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encode<T: Scalar>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.extend_from_slice(&4u32.to_le_bytes());
    for d in t.shape().dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.reserve(t.numel() * T::DTYPE.size());
    for &v in t.data() {
        v.write_le(out);
    }
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() < self.pos + n {
            return Err(parse_err(
                self.pos,
                format!(
                    "truncated {what}: need {n} bytes, {} available",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn decode_data<T: Scalar>(raw: &[u8], shape: Shape) -> Tensor<T> {
    let size = T::DTYPE.size();
    let data = raw.chunks_exact(size).map(T::read_le).collect();
    Tensor::from_vec(shape, data).expect("length checked by reader")
}

/// Decodes one record starting at `offset`; returns it and the offset just
/// past it.
pub fn decode_at(bytes: &[u8], offset: usize) -> Result<(AnyTensor, usize)> {
    let mut r = Reader { bytes, pos: offset };
    let magic_at = r.pos;
    if r.take(4, "magic")? != MAGIC {
        return Err(parse_err(magic_at, "bad magic, expected \"BNKT\""));
    }
    let version_at = r.pos;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(parse_err(version_at, format!("unsupported version {version}")));
    }
    let dtype_at = r.pos;
    let code = r.take(1, "dtype")?[0];
    let dtype = DType::from_code(code)
        .ok_or_else(|| parse_err(dtype_at, format!("unknown dtype code {code}")))?;
    let rank_at = r.pos;
    let rank = r.u32("rank")? as usize;
    if !(1..=4).contains(&rank) {
        return Err(parse_err(rank_at, format!("rank {rank} outside 1..=4")));
    }
    let mut dims = [1usize; 4];
    for i in 0..rank {
        let at = r.pos;
        let d = r.u32("dims")? as usize;
        if d == 0 {
            return Err(parse_err(at, "zero-length dimension"));
        }
        dims[4 - rank + i] = d;
    }
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]).expect("dims are non-zero");
    let raw = r.take(shape.numel() * dtype.size(), "data")?;
    let t = match dtype {
        DType::F32 => AnyTensor::F32(decode_data(raw, shape)),
        DType::F64 => AnyTensor::F64(decode_data(raw, shape)),
    };
    Ok((t, r.pos))
}

pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    let (t, end) = decode_at(bytes, 0)?;
    if end != bytes.len() {
        return Err(parse_err(end, "trailing bytes after record"));
    }
    Ok(t)
}

pub fn decode_all(bytes: &[u8]) -> Result<Vec<AnyTensor>> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let (t, next) = decode_at(bytes, pos)?;
        out.push(t);
        pos = next;
    }
    Ok(out)
}

pub fn write_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::new();
    encode(t, &mut buf);
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_any(path: impl AsRef<Path>) -> Result<AnyTensor> {
    decode(&fs::read(path)?)
}

pub fn read_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    Ok(read_any(path)?.into_tensor())
}
