//! Binary activation files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `APQT` |
//! | 4     | format version, `u32` = 1 |
//! | 4     | dtype code, `u32`: 1 = f32, 2 = f64 |
//! | 8     | rows, `u64` |
//! | 8     | cols, `u64` |
//! | rows·cols·size | row-major payload |
//! | 8 + count | optional label block: `u64` count (= rows) then `u8` per row |
//!
//! Nothing may follow the label block.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{HarnessError, Result};

pub const MAGIC: [u8; 4] = *b"APQT";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 28;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u32 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationFile {
    /// Stored precision; f32 payloads are widened on read.
    pub dtype: Dtype,
    pub data: DMatrix<f64>,
    pub labels: Option<Vec<u8>>,
}

impl ActivationFile {
    pub fn new(data: DMatrix<f64>, labels: Option<Vec<u8>>) -> Self {
        Self {
            dtype: Dtype::F64,
            data,
            labels,
        }
    }

    /// Labels as booleans; every label must be 0 or 1.
    pub fn binary_labels(&self) -> Option<std::result::Result<Vec<bool>, u8>> {
        self.labels.as_ref().map(|l| {
            l.iter()
                .map(|v| match v {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(*other),
                })
                .collect()
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (rows, cols) = self.data.shape();
        let mut out = Vec::with_capacity(HEADER_LEN + rows * cols * self.dtype.size());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.dtype.code().to_le_bytes());
        out.extend_from_slice(&(rows as u64).to_le_bytes());
        out.extend_from_slice(&(cols as u64).to_le_bytes());
        for i in 0..rows {
            for j in 0..cols {
                let v = self.data[(i, j)];
                match self.dtype {
                    Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                    Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        if let Some(labels) = &self.labels {
            out.extend_from_slice(&(labels.len() as u64).to_le_bytes());
            out.extend_from_slice(labels);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        let format = |reason: String| HarnessError::Format {
            path: path.to_string(),
            reason,
        };
        let truncated = |expected: usize| HarnessError::Truncated {
            path: path.to_string(),
            expected: expected as u64,
            actual: bytes.len() as u64,
        };
        if bytes.len() < 4 || bytes[..4] != MAGIC {
            return Err(format("bad magic (expected APQT)".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(truncated(HEADER_LEN));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(format(format!("unsupported format version {version}")));
        }
        let dtype = Dtype::from_code(u32_at(8)).ok_or_else(|| format(format!("unknown dtype code {}", u32_at(8))))?;
        let (rows, cols) = (u64_at(12), u64_at(20));
        let payload = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(dtype.size() as u64))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| format(format!("header shape {rows}×{cols} overflows")))?;
        let end = HEADER_LEN + payload;
        if bytes.len() < end {
            return Err(truncated(end));
        }
        let (rows, cols) = (rows as usize, cols as usize);
        let body = &bytes[HEADER_LEN..end];
        let data = match dtype {
            Dtype::F64 => DMatrix::from_fn(rows, cols, |i, j| {
                let o = (i * cols + j) * 8;
                f64::from_le_bytes(body[o..o + 8].try_into().unwrap())
            }),
            Dtype::F32 => DMatrix::from_fn(rows, cols, |i, j| {
                let o = (i * cols + j) * 4;
                f32::from_le_bytes(body[o..o + 4].try_into().unwrap()) as f64
            }),
        };
        let rest = &bytes[end..];
        let labels = if rest.is_empty() {
            None
        } else {
            if rest.len() < 8 {
                return Err(truncated(end + 8));
            }
            let count = u64::from_le_bytes(rest[..8].try_into().unwrap());
            if count != rows as u64 {
                return Err(format(format!("label count {count} does not match {rows} rows")));
            }
            let want = end + 8 + rows;
            if bytes.len() < want {
                return Err(truncated(want));
            }
            if bytes.len() > want {
                return Err(format(format!(
                    "{} trailing bytes after the label block",
                    bytes.len() - want
                )));
            }
            Some(rest[8..].to_vec())
        };
        Ok(Self { dtype, data, labels })
    }
}

pub fn read_activations(path: impl AsRef<Path>) -> Result<ActivationFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    ActivationFile::from_bytes(&bytes, &path.display().to_string())
}

/// Writes an f64 activation file.
pub fn write_activations(path: impl AsRef<Path>, data: &DMatrix<f64>, labels: Option<&[u8]>) -> Result<()> {
    let file = ActivationFile::new(data.clone(), labels.map(|l| l.to_vec()));
    write_activation_file(path, &file)
}

pub fn write_activation_file(path: impl AsRef<Path>, file: &ActivationFile) -> Result<()> {
    if let Some(l) = &file.labels {
        if l.len() != file.data.nrows() {
            return Err(HarnessError::Config(format!(
                "{} labels for {} rows",
                l.len(),
                file.data.nrows()
            )));
        }
    }
    let path = path.as_ref();
    fs::write(path, file.to_bytes()).map_err(|e| HarnessError::io(path, e))
}
