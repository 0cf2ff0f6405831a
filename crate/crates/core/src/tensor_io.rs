//! The `DMCT` tensor container.
//!
//! Layout: magic `DMCT`, version byte `0x01`, dtype byte (`0x01` f64,
//! `0x02` complex f64 as interleaved re/im), rank byte, `rank` little-endian
//! `u64` dimensions, then the row-major little-endian payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{DmcError, Result};
use crate::linalg::C64;

const MAGIC: &[u8; 4] = b"DMCT";
const VERSION: u8 = 0x01;
const DTYPE_F64: u8 = 0x01;
const DTYPE_C64: u8 = 0x02;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    Complex(Vec<C64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn real(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(dims, TensorData::F64(data))
    }

    pub fn complex(dims: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        Self::new(dims, TensorData::Complex(data))
    }

    fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(DmcError::Format(format!("rank {} too large", dims.len())));
        }
        let expect: usize = dims.iter().product();
        let len = match &data {
            TensorData::F64(v) => v.len(),
            TensorData::Complex(v) => v.len(),
        };
        if expect != len {
            return Err(DmcError::shape(format!("dims {dims:?} need {expect} elements, got {len}")));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_real(self) -> Result<Vec<f64>> {
        match self.data {
            TensorData::F64(v) => Ok(v),
            TensorData::Complex(_) => Err(DmcError::Format("expected f64 tensor, found complex".into())),
        }
    }

    pub fn into_complex(self) -> Result<Vec<C64>> {
        match self.data {
            TensorData::Complex(v) => Ok(v),
            TensorData::F64(_) => Err(DmcError::Format("expected complex tensor, found f64".into())),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let dtype = match self.data {
            TensorData::F64(_) => DTYPE_F64,
            TensorData::Complex(_) => DTYPE_C64,
        };
        let mut buf = Vec::with_capacity(7 + 8 * self.dims.len() + self.payload_bytes());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&[VERSION, dtype, self.dims.len() as u8]);
        for d in &self.dims {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            TensorData::Complex(v) => v.iter().for_each(|z| {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }),
        }
        w.write_all(&buf)?;
        Ok(())
    }

    fn payload_bytes(&self) -> usize {
        match &self.data {
            TensorData::F64(v) => 8 * v.len(),
            TensorData::Complex(v) => 16 * v.len(),
        }
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = bytes.get(..7).ok_or_else(|| DmcError::Format("truncated header".into()))?;
        if &header[..4] != MAGIC {
            return Err(DmcError::Format("bad magic".into()));
        }
        if header[4] != VERSION {
            return Err(DmcError::Format(format!("unsupported version {}", header[4])));
        }
        let (dtype, rank) = (header[5], header[6] as usize);
        let mut off = 7;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let raw = bytes.get(off..off + 8).ok_or_else(|| DmcError::Format("truncated dimensions".into()))?;
            let d = u64::from_le_bytes(raw.try_into().expect("8 bytes"));
            dims.push(usize::try_from(d).map_err(|_| DmcError::Format("dimension overflow".into()))?);
            off += 8;
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| DmcError::Format("element count overflow".into()))?;
        let width = match dtype {
            DTYPE_F64 => 8,
            DTYPE_C64 => 16,
            other => return Err(DmcError::Format(format!("unknown dtype {other:#04x}"))),
        };
        let payload = &bytes[off..];
        if Some(payload.len()) != count.checked_mul(width) {
            return Err(DmcError::Format(format!(
                "payload has {} bytes, expected {} elements of {width}",
                payload.len(),
                count
            )));
        }
        let f = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8 bytes"));
        let data = if dtype == DTYPE_F64 {
            TensorData::F64(payload.chunks_exact(8).map(f).collect())
        } else {
            TensorData::Complex(payload.chunks_exact(16).map(|c| C64::new(f(&c[..8]), f(&c[8..]))).collect())
        };
        Ok(Self { dims, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        self.write_to(&mut f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}
