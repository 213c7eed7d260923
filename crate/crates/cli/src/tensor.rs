//! The `UPST` tensor file format.
//!
//! Layout, all little-endian: magic `UPST`, `u16` version (1), `u8` dtype
//! (0 f32, 1 f64, 2 u32, 3 u16, 4 u8), `u8` ndim, `ndim` × `u32` dims, then
//! the row-major payload.

use std::path::Path;

use evpan_core::{DenseGrid, LabelGrid, PanopticGrid};

use crate::error::CliError;

pub const MAGIC: &[u8; 4] = b"UPST";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    U32 = 2,
    U16 = 3,
    U8 = 4,
}

impl DType {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => DType::F32,
            1 => DType::F64,
            2 => DType::U32,
            3 => DType::U16,
            4 => DType::U8,
            _ => return None,
        })
    }

    pub fn size(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 | DType::U32 => 4,
            DType::U16 => 2,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U32(Vec<u32>),
    U16(Vec<u16>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::U32(_) => DType::U32,
            TensorData::U16(_) => DType::U16,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U32(v) => v.len(),
            TensorData::U16(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("not a UPST tensor file (bad magic)")]
    BadMagic,
    #[error("unsupported tensor version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("dims {dims:?} do not match {len} values")]
    ShapeMismatch { dims: Vec<u32>, len: usize },
    #[error("{0}")]
    Unexpected(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<u32>,
    data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: TensorData) -> Result<Self, TensorError> {
        if dims.len() > u8::MAX as usize || dims.iter().map(|&d| d as usize).product::<usize>() != data.len() {
            return Err(TensorError::ShapeMismatch { dims, len: data.len() });
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[u32] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.dims.len() + self.data.len() * self.data.dtype().size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.data.dtype() as u8);
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        let need = |expected: usize| {
            if bytes.len() < expected {
                Err(TensorError::Truncated { expected, actual: bytes.len() })
            } else {
                Ok(())
            }
        };
        need(HEADER_LEN)?;
        if &bytes[..4] != MAGIC {
            return Err(TensorError::BadMagic);
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(TensorError::UnsupportedVersion(version));
        }
        let dtype = DType::from_code(bytes[6]).ok_or(TensorError::UnknownDtype(bytes[6]))?;
        let ndim = bytes[7] as usize;
        let payload_start = HEADER_LEN + 4 * ndim;
        need(payload_start)?;
        let dims: Vec<u32> = bytes[HEADER_LEN..payload_start]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| TensorError::Unexpected(format!("dims {dims:?} overflow")))?;
        let end = count
            .checked_mul(dtype.size())
            .and_then(|n| n.checked_add(payload_start))
            .ok_or_else(|| TensorError::Unexpected(format!("dims {dims:?} overflow")))?;
        need(end)?;
        if bytes.len() > end {
            return Err(TensorError::TrailingBytes(bytes.len() - end));
        }
        let p = &bytes[payload_start..end];
        let data = match dtype {
            DType::F32 => TensorData::F32(p.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::F64 => TensorData::F64(p.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::U32 => TensorData::U32(p.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::U16 => TensorData::U16(p.chunks_exact(2).map(|c| u16::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::U8 => TensorData::U8(p.to_vec()),
        };
        Tensor::new(dims, data)
    }

    pub fn from_dense(grid: &DenseGrid) -> Self {
        let (h, w, c) = grid.shape();
        Self { dims: vec![h as u32, w as u32, c as u32], data: TensorData::F64(grid.data().to_vec()) }
    }

    pub fn from_panoptic(grid: &PanopticGrid) -> Self {
        Self { dims: vec![grid.height() as u32, grid.width() as u32], data: TensorData::U32(grid.data().to_vec()) }
    }

    pub fn from_labels(grid: &LabelGrid) -> Self {
        Self { dims: vec![grid.height() as u32, grid.width() as u32], data: TensorData::U32(grid.data().to_vec()) }
    }

    /// Float tensor of shape `H×W` (one channel) or `H×W×C`.
    pub fn to_dense(&self) -> Result<DenseGrid, TensorError> {
        let (h, w, c) = match self.dims[..] {
            [h, w] => (h, w, 1),
            [h, w, c] => (h, w, c),
            _ => return Err(TensorError::Unexpected(format!("expected 2 or 3 dims, got {:?}", self.dims))),
        };
        let data = match &self.data {
            TensorData::F64(v) => v.clone(),
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            other => return Err(TensorError::Unexpected(format!("expected a float tensor, got {:?}", other.dtype()))),
        };
        DenseGrid::new(h as usize, w as usize, c as usize, data).map_err(|e| TensorError::Unexpected(e.to_string()))
    }

    /// Integer tensor of shape `H×W` holding panoptic ids.
    pub fn to_panoptic(&self) -> Result<PanopticGrid, TensorError> {
        let [h, w] = self.dims[..] else {
            return Err(TensorError::Unexpected(format!("expected 2 dims, got {:?}", self.dims)));
        };
        let data = match &self.data {
            TensorData::U32(v) => v.clone(),
            TensorData::U16(v) => v.iter().map(|&x| x as u32).collect(),
            TensorData::U8(v) => v.iter().map(|&x| x as u32).collect(),
            other => return Err(TensorError::Unexpected(format!("expected an integer tensor, got {:?}", other.dtype()))),
        };
        PanopticGrid::new(h as usize, w as usize, data).map_err(|e| TensorError::Unexpected(e.to_string()))
    }
}

pub fn read_tensor(path: &Path) -> Result<Tensor, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Tensor::from_bytes(&bytes).map_err(|e| CliError::invalid(path, e))
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<(), CliError> {
    std::fs::write(path, tensor.to_bytes()).map_err(|e| CliError::io(path, e))
}

pub fn read_dense(path: &Path) -> Result<DenseGrid, CliError> {
    read_tensor(path)?.to_dense().map_err(|e| CliError::invalid(path, e))
}

pub fn read_panoptic(path: &Path) -> Result<PanopticGrid, CliError> {
    read_tensor(path)?.to_panoptic().map_err(|e| CliError::invalid(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_every_dtype() {
        for data in [
            TensorData::F32(vec![1.5, -0.0, f32::MIN_POSITIVE, 3.0e38, 7.0, 8.0]),
            TensorData::F64(vec![0.1, -2.5e-300, 1.0 / 3.0, 5.0, 6.0, 7.0]),
            TensorData::U32(vec![0, 1, u32::MAX, 4000, 5, 6]),
            TensorData::U16(vec![0, 1, u16::MAX, 4, 5, 6]),
            TensorData::U8(vec![0, 1, 255, 3, 4, 5]),
        ] {
            let t = Tensor::new(vec![2, 3], data).unwrap();
            let back = Tensor::from_bytes(&t.to_bytes()).unwrap();
            assert_eq!(back.to_bytes(), t.to_bytes());
            assert_eq!(back, t);
        }
    }

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![1, 2], TensorData::U8(vec![7, 9])).unwrap();
        assert_eq!(t.to_bytes(), [b'U', b'P', b'S', b'T', 1, 0, 4, 2, 1, 0, 0, 0, 2, 0, 0, 0, 7, 9]);
    }

    #[test]
    fn rejects_malformed() {
        let good = Tensor::new(vec![2, 2], TensorData::F64(vec![1.0; 4])).unwrap().to_bytes();
        assert_eq!(Tensor::from_bytes(&good[..good.len() - 1]), Err(TensorError::Truncated { expected: good.len(), actual: good.len() - 1 }));
        assert!(matches!(Tensor::from_bytes(&good[..5]), Err(TensorError::Truncated { .. })));
        let mut v2 = good.clone();
        v2[4] = 2;
        assert_eq!(Tensor::from_bytes(&v2), Err(TensorError::UnsupportedVersion(2)));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(Tensor::from_bytes(&bad), Err(TensorError::BadMagic));
        let mut dt = good.clone();
        dt[6] = 9;
        assert_eq!(Tensor::from_bytes(&dt), Err(TensorError::UnknownDtype(9)));
        let mut long = good;
        long.push(0);
        assert_eq!(Tensor::from_bytes(&long), Err(TensorError::TrailingBytes(1)));
    }

    #[test]
    fn grid_conversions() {
        let g = DenseGrid::new(1, 2, 2, vec![0.25, 0.5, 1.0, -3.0]).unwrap();
        assert_eq!(Tensor::from_dense(&g).to_dense().unwrap(), g);
        let p = PanopticGrid::new(1, 3, vec![0, 2001, evpan_core::VOID]).unwrap();
        assert_eq!(Tensor::from_panoptic(&p).to_panoptic().unwrap(), p);
        assert!(Tensor::from_dense(&g).to_panoptic().is_err());
        let nan = Tensor::new(vec![1, 1], TensorData::F64(vec![f64::NAN])).unwrap();
        assert!(nan.to_dense().is_err());
    }
}
