//! Raw tensor files.
//!
//! Layout (all integers little-endian u32):
//! `"D3DT"`, version (1), scalar code (0 = f32, 1 = f64), rank,
//! `rank` extents outermost-first, then the row-major payload in
//! little-endian scalars.

use std::io::{Read, Write};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"D3DT";
pub const VERSION: u32 = 1;

// Guards against absurd headers in corrupt files.
const MAX_RANK: u32 = 16;

/// A tensor read from disk in whichever precision it was stored.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorRecord {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl TensorRecord {
    pub fn shape(&self) -> &[usize] {
        match self {
            TensorRecord::F32(t) => t.shape(),
            TensorRecord::F64(t) => t.shape(),
        }
    }

    /// Convert to the requested precision (exact when it matches the stored one).
    pub fn into_tensor<S: Scalar>(self) -> Tensor<S> {
        match self {
            TensorRecord::F32(t) => t.cast(),
            TensorRecord::F64(t) => t.cast(),
        }
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_tensor<S: Scalar>(w: &mut impl Write, t: &Tensor<S>) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * t.rank() + S::BYTES * t.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&S::CODE.to_le_bytes());
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut buf);
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_payload<S: Scalar>(r: &mut impl Read, shape: &[usize]) -> Result<Tensor<S>> {
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * S::BYTES];
    r.read_exact(&mut bytes)?;
    let data = bytes.chunks_exact(S::BYTES).map(S::read_le).collect();
    Tensor::new(shape, data)
}

pub fn read_tensor(r: &mut impl Read) -> Result<TensorRecord> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let code = read_u32(r)?;
    let rank = read_u32(r)?;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!("bad rank {rank}")));
    }
    let shape = (0..rank)
        .map(|_| read_u32(r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    match code {
        0 => Ok(TensorRecord::F32(read_payload(r, &shape)?)),
        1 => Ok(TensorRecord::F64(read_payload(r, &shape)?)),
        other => Err(Error::Format(format!("unknown scalar code {other}"))),
    }
}
