//! `.avt` tensor files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "AVTENSR1"
//! dtype   u8       0 = f32, 1 = f64
//! ndim    u8
//! dims    ndim × u32
//! payload product(dims) values, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"AVTENSR1";

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::F64(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::arg("tensor needs at least one dimension"));
        }
        if dims.len() > u8::MAX as usize {
            return Err(Error::arg("tensor rank exceeds 255"));
        }
        if let Some(d) = dims.iter().find(|&&d| d > u32::MAX as usize) {
            return Err(Error::arg(format!("dimension {d} does not fit in u32")));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::DimensionMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor { dims, data })
    }

    pub fn f64(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        Tensor::new(dims, TensorData::F64(values))
    }

    pub fn f32(dims: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        Tensor::new(dims, TensorData::F32(values))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    /// Values widened to f64 regardless of the stored dtype.
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let width = match self.data {
            TensorData::F32(_) => 4,
            TensorData::F64(_) => 8,
        };
        let mut out = Vec::with_capacity(10 + 4 * self.dims.len() + width * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(self.data.code());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 {
            return Err(Error::format("tensor", "file shorter than header"));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::format("tensor", "magic mismatch"));
        }
        let code = bytes[8];
        let ndim = bytes[9] as usize;
        if ndim == 0 {
            return Err(Error::format("tensor", "ndim is zero"));
        }
        let header = 10 + 4 * ndim;
        if bytes.len() < header {
            return Err(Error::format("tensor", "dims truncated"));
        }
        let dims: Vec<usize> = bytes[10..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format("tensor", "dims overflow"))?;
        let payload = &bytes[header..];
        let width = match code {
            0 => 4,
            1 => 8,
            other => return Err(Error::format("tensor", format!("unknown dtype code {other}"))),
        };
        if payload.len() != count * width {
            return Err(Error::format(
                "tensor",
                format!(
                    "payload is {} bytes but dims {:?} require {}",
                    payload.len(),
                    dims,
                    count * width
                ),
            ));
        }
        let data = if code == 0 {
            TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        } else {
            TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        };
        Tensor::new(dims, data)
    }
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes)
}
