//! `SFOT` binary tensor files.
//!
//! Layout: magic `SFOT`, version byte `1`, dtype byte (`1` = f32, `2` = u8),
//! rank byte, `rank` little-endian u32 dims, then the row-major payload
//! (f32 values little-endian).

use std::fs;
use std::path::Path;

use crate::error::{data_err, shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{LabelMap, Tensor};

pub const MAGIC: &[u8; 4] = b"SFOT";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;
pub const DTYPE_U8: u8 = 2;

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

/// Any array an SFOT file can hold.
#[derive(Clone, Debug, PartialEq)]
pub struct SfotArray {
    pub dims: Vec<usize>,
    pub payload: Payload,
}

impl SfotArray {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let (dtype, payload_len) = match &self.payload {
            Payload::F32(v) => (DTYPE_F32, v.len()),
            Payload::U8(v) => (DTYPE_U8, v.len()),
        };
        if self.dims.len() > u8::MAX as usize {
            return Err(shape_err!("rank {} too large for SFOT", self.dims.len()));
        }
        if self.dims.iter().product::<usize>() != payload_len {
            return Err(shape_err!(
                "SFOT dims {:?} disagree with payload length {}",
                self.dims,
                payload_len
            ));
        }
        let mut out = Vec::with_capacity(7 + 4 * self.dims.len() + 4 * payload_len);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(dtype);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            let d = u32::try_from(d).map_err(|_| shape_err!("dim {} exceeds u32", d))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.payload {
            Payload::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U8(v) => out.extend_from_slice(v),
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 7 || &bytes[..4] != MAGIC {
            return Err(data_err!("not an SFOT file"));
        }
        if bytes[4] != VERSION {
            return Err(data_err!("unsupported SFOT version {}", bytes[4]));
        }
        let dtype = bytes[5];
        let rank = bytes[6] as usize;
        let header = 7 + 4 * rank;
        if bytes.len() < header {
            return Err(data_err!("truncated SFOT header"));
        }
        let dims: Vec<usize> = bytes[7..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let count: usize = dims.iter().product();
        let body = &bytes[header..];
        let payload = match dtype {
            DTYPE_F32 => {
                if body.len() != 4 * count {
                    return Err(data_err!(
                        "SFOT f32 payload has {} bytes, want {}",
                        body.len(),
                        4 * count
                    ));
                }
                Payload::F32(
                    body.chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                )
            }
            DTYPE_U8 => {
                if body.len() != count {
                    return Err(data_err!(
                        "SFOT u8 payload has {} bytes, want {}",
                        body.len(),
                        count
                    ));
                }
                Payload::U8(body.to_vec())
            }
            other => return Err(data_err!("unknown SFOT dtype {}", other)),
        };
        Ok(Self { dims, payload })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn into_tensor<T: Scalar>(self) -> Result<Tensor<T>> {
        let dims: [usize; 4] = self
            .dims
            .as_slice()
            .try_into()
            .map_err(|_| data_err!("expected rank-4 tensor, got dims {:?}", self.dims))?;
        match self.payload {
            Payload::F32(v) => {
                Tensor::new(dims, v.into_iter().map(|x| T::narrow(x as f64)).collect())
            }
            Payload::U8(_) => Err(data_err!("expected f32 tensor, found u8")),
        }
    }

    pub fn into_labels(self) -> Result<LabelMap> {
        let dims: [usize; 3] = self
            .dims
            .as_slice()
            .try_into()
            .map_err(|_| data_err!("expected rank-3 label map, got dims {:?}", self.dims))?;
        match self.payload {
            Payload::U8(v) => LabelMap::new(dims, v),
            Payload::F32(_) => Err(data_err!("expected u8 label map, found f32")),
        }
    }
}

impl<T: Scalar> From<&Tensor<T>> for SfotArray {
    fn from(t: &Tensor<T>) -> Self {
        Self {
            dims: t.dims().to_vec(),
            payload: Payload::F32(t.data().iter().map(|v| v.widen() as f32).collect()),
        }
    }
}

impl From<&LabelMap> for SfotArray {
    fn from(m: &LabelMap) -> Self {
        Self {
            dims: m.dims().to_vec(),
            payload: Payload::U8(m.data().to_vec()),
        }
    }
}

pub fn write_tensor<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    SfotArray::from(t).write(path)
}

pub fn read_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    SfotArray::read(path)?.into_tensor()
}

pub fn write_labels(path: &Path, m: &LabelMap) -> Result<()> {
    SfotArray::from(m).write(path)
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    SfotArray::read(path)?.into_labels()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::<f32>::new([1, 1, 1, 2], vec![1.0, -2.5]).unwrap();
        let bytes = SfotArray::from(&t).encode().unwrap();
        let mut want = b"SFOT".to_vec();
        want.extend_from_slice(&[1, 1, 4]);
        for d in [1u32, 1, 1, 2] {
            want.extend_from_slice(&d.to_le_bytes());
        }
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn u8_labels_use_dtype_two() {
        let m = LabelMap::new([1, 2, 2], vec![0, 1, 255, 3]).unwrap();
        let bytes = SfotArray::from(&m).encode().unwrap();
        assert_eq!(bytes[5], DTYPE_U8);
        assert_eq!(bytes[6], 3);
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 1, 255, 3]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(SfotArray::decode(b"NOPE\x01\x01\x00").is_err());
        assert!(SfotArray::decode(b"SFOT\x02\x01\x00").is_err());
        assert!(SfotArray::decode(b"SFOT\x01\x09\x00").is_err());
        let mut truncated = SfotArray::from(&Tensor::<f32>::zeros([1, 1, 2, 2]))
            .encode()
            .unwrap();
        truncated.pop();
        assert!(SfotArray::decode(&truncated).is_err());
    }

    proptest! {
        #[test]
        fn tensor_roundtrip(dims in prop::array::uniform4(1usize..4), seed in any::<u32>()) {
            let t = Tensor::<f32>::from_fn(dims, |[n, c, y, x]| {
                ((n * 31 + c * 7 + y * 3 + x) as f32 + seed as f32).sin()
            });
            let back: Tensor<f32> = SfotArray::decode(&SfotArray::from(&t).encode().unwrap())
                .unwrap()
                .into_tensor()
                .unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
