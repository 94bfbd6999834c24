//! The `SLW1` weight container.
//!
//! Layout, all integers little-endian, no padding:
//!
//! ```text
//! "SLW1" | u16 version (=1) | u8 dtype (0 = f32) | u32 record count
//! per record: u16 name length | UTF-8 name | u8 rank | rank x u32 dims | f32 data
//! ```
//!
//! Nothing may follow the last record.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use super::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"SLW1";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
}

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported dtype tag {0}")]
    UnsupportedDtype(u8),
    #[error("truncated input: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("record name is not valid UTF-8")]
    InvalidName,
    #[error("record name {0:?} is too long")]
    NameTooLong(String),
    #[error("duplicate record name {0:?}")]
    DuplicateName(String),
    #[error("record {name:?} has invalid dims {dims:?}")]
    InvalidShape { name: String, dims: Vec<usize> },
    #[error("record {0:?} contains a non-finite value")]
    NonFinite(String),
    #[error("missing record {0:?}")]
    MissingRecord(String),
    #[error("expected {expected} records, found {found}")]
    RecordCount { expected: usize, found: usize },
    #[error("record {name:?}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightRecord {
    pub name: String,
    pub tensor: Tensor<f32>,
}

/// Ordered, uniquely named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    version: u16,
    dtype: DType,
    records: Vec<WeightRecord>,
}

impl Default for ModelWeights {
    fn default() -> Self {
        Self::new()
    }
}

impl ModelWeights {
    pub fn new() -> Self {
        Self {
            version: FORMAT_VERSION,
            dtype: DType::F32,
            records: Vec::new(),
        }
    }

    pub fn version(&self) -> u16 {
        self.version
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn records(&self) -> &[WeightRecord] {
        &self.records
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor<f32>,
    ) -> Result<(), WeightsError> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(WeightsError::NameTooLong(name));
        }
        if self.get(&name).is_some() {
            return Err(WeightsError::DuplicateName(name));
        }
        if tensor.rank() > u8::MAX as usize || tensor.shape().iter().any(|&d| d > u32::MAX as usize)
        {
            return Err(WeightsError::InvalidShape {
                dims: tensor.shape().to_vec(),
                name,
            });
        }
        self.records.push(WeightRecord { name, tensor });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.records
            .iter()
            .find(|r| r.name == name)
            .map(|r| &r.tensor)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, WeightsError> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.push(self.dtype as u8);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            if !r.tensor.all_finite() {
                return Err(WeightsError::NonFinite(r.name.clone()));
            }
            out.extend_from_slice(&(r.name.len() as u16).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.tensor.rank() as u8);
            for &d in r.tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in r.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightsError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur.take(4)?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(WeightsError::BadMagic(magic));
        }
        let version = cur.u16()?;
        if version != FORMAT_VERSION {
            return Err(WeightsError::UnsupportedVersion(version));
        }
        let dtype = match cur.u8()? {
            0 => DType::F32,
            other => return Err(WeightsError::UnsupportedDtype(other)),
        };
        let count = cur.u32()? as usize;
        let mut weights = ModelWeights {
            version,
            dtype,
            records: Vec::with_capacity(count.min(4096)),
        };
        for _ in 0..count {
            let name_len = cur.u16()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| WeightsError::InvalidName)?
                .to_string();
            let rank = cur.u8()? as usize;
            let dims = (0..rank)
                .map(|_| cur.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|_| dims.iter().all(|&d| d > 0));
            let Some(len) = len else {
                return Err(WeightsError::InvalidShape { name, dims });
            };
            let raw =
                cur.take(
                    len.checked_mul(4)
                        .ok_or_else(|| WeightsError::InvalidShape {
                            name: name.clone(),
                            dims: dims.clone(),
                        })?,
                )?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let tensor =
                Tensor::new(dims.clone(), data).map_err(|_| WeightsError::InvalidShape {
                    name: name.clone(),
                    dims,
                })?;
            weights.push(name, tensor)?;
        }
        let rest = bytes.len() - cur.pos;
        if rest != 0 {
            return Err(WeightsError::TrailingBytes(rest));
        }
        Ok(weights)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), WeightsError> {
        w.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, WeightsError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), WeightsError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WeightsError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightsError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(WeightsError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WeightsError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WeightsError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}
