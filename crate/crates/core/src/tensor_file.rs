//! `ETNS` tensor files.
//!
//! ```text
//! "ETNS" | dtype: u8 (0=float32, 1=int8, 2=int32) | rank: u8 | rank × u32 LE extents | payload
//! ```
//!
//! The payload is little-endian, row-major in the tensor's declared layout.

use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::DType;

const MAGIC: &[u8; 4] = b"ETNS";

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Float32(Vec<f32>),
    Int8(Vec<i8>),
    Int32(Vec<i32>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::Float32(_) => DType::Float32,
            TensorData::Int8(_) => DType::Int8,
            TensorData::Int32(_) => DType::Int32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::Float32(v) => v.len(),
            TensorData::Int8(v) => v.len(),
            TensorData::Int32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<u32>,
    pub data: TensorData,
}

impl TensorFile {
    pub fn new(dims: Vec<u32>, data: TensorData) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(Error::TensorFormat(format!("rank {} does not fit in one byte", dims.len())));
        }
        let numel: u64 = dims.iter().map(|&d| d as u64).product();
        if numel != data.len() as u64 {
            return Err(Error::TensorFormat(format!(
                "extents {dims:?} describe {numel} elements but payload has {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn float32(dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        Self::new(dims, TensorData::Float32(data))
    }

    pub fn encode(&self) -> Vec<u8> {
        let width = self.data.dtype().width();
        let mut out = Vec::with_capacity(6 + 4 * self.dims.len() + width * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(self.data.dtype().code());
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::Float32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::Int8(v) => out.extend(v.iter().map(|&x| x as u8)),
            TensorData::Int32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let short = || Error::TensorFormat("truncated header".into());
        if bytes.len() < 6 || &bytes[..4] != MAGIC {
            return Err(Error::TensorFormat("missing ETNS magic".into()));
        }
        let dtype = DType::from_code(bytes[4])
            .ok_or_else(|| Error::TensorFormat(format!("unknown dtype code {}", bytes[4])))?;
        let rank = bytes[5] as usize;
        let header = 6 + 4 * rank;
        if bytes.len() < header {
            return Err(short());
        }
        let dims: Vec<u32> =
            bytes[6..header].chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        let numel: usize = dims.iter().map(|&d| d as usize).product();
        let payload = &bytes[header..];
        if payload.len() != numel * dtype.width() {
            return Err(Error::TensorFormat(format!(
                "payload is {} bytes, expected {}",
                payload.len(),
                numel * dtype.width()
            )));
        }
        let data = match dtype {
            DType::Float32 => TensorData::Float32(
                payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            DType::Int8 => TensorData::Int8(payload.iter().map(|&b| b as i8).collect()),
            DType::Int32 => {
                TensorData::Int32(payload.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect())
            }
        };
        Ok(Self { dims, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}
