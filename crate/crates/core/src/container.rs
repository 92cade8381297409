//! On-disk tensor container: one JSON header line, then a raw little-endian
//! payload.
//!
//! The header records dtype, shape, element order, a free-form unit string
//! and the byte order; the payload is the row-major element stream, complex
//! values interleaved as (re, im). The format is append-free and
//! memory-mappable, and a file is bitwise reproducible from the same tensor.

use ndarray::{ArrayD, ArrayViewD, IxDyn};
use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

/// Preferred file extension for tensors written by this crate.
pub const TENSOR_EXT: &str = "dpt";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("missing newline after the JSON header")]
    UnterminatedHeader,
    #[error("payload holds {got} bytes, but shape {shape:?} as {dtype} needs {expected}")]
    PayloadLength { dtype: Dtype, shape: Vec<usize>, expected: usize, got: usize },
    #[error("file holds {got}, expected {expected}")]
    DtypeMismatch { expected: Dtype, got: Dtype },
    #[error("unsupported endianness {0:?}; only \"little\" is readable")]
    Endianness(String),
    #[error("unsupported element order {0:?}; only \"row-major\" is readable")]
    Order(String),
}

/// Element type of a stored tensor. `c64`/`c128` are complex pairs of the
/// half-width float.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
    #[serde(rename = "c64")]
    C64,
    #[serde(rename = "c128")]
    C128,
}

impl Dtype {
    pub fn byte_width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::C64 => 8,
            Dtype::C128 => 16,
        }
    }
}

impl std::fmt::Display for Dtype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
            Dtype::C64 => "c64",
            Dtype::C128 => "c128",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorHeader {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub order: String,
    pub units: String,
    pub endianness: String,
}

/// A tensor with its element type made explicit.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(ArrayD<f32>),
    F64(ArrayD<f64>),
    C64(ArrayD<Complex32>),
    C128(ArrayD<Complex64>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
            TensorData::C64(_) => Dtype::C64,
            TensorData::C128(_) => Dtype::C128,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            TensorData::F32(a) => a.shape(),
            TensorData::F64(a) => a.shape(),
            TensorData::C64(a) => a.shape(),
            TensorData::C128(a) => a.shape(),
        }
    }
}

fn header_for(data: &TensorData, units: &str) -> TensorHeader {
    TensorHeader {
        dtype: data.dtype(),
        shape: data.shape().to_vec(),
        order: "row-major".into(),
        units: units.into(),
        endianness: "little".into(),
    }
}

fn payload_bytes(data: &TensorData) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.shape().iter().product::<usize>() * data.dtype().byte_width());
    match data {
        TensorData::F32(a) => {
            for &x in a.as_standard_layout().iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorData::F64(a) => {
            for &x in a.as_standard_layout().iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorData::C64(a) => {
            for &x in a.as_standard_layout().iter() {
                out.extend_from_slice(&x.re.to_le_bytes());
                out.extend_from_slice(&x.im.to_le_bytes());
            }
        }
        TensorData::C128(a) => {
            for &x in a.as_standard_layout().iter() {
                out.extend_from_slice(&x.re.to_le_bytes());
                out.extend_from_slice(&x.im.to_le_bytes());
            }
        }
    }
    out
}

/// Writes a tensor file: `{header JSON}\n{payload}`.
pub fn write_tensor(path: impl AsRef<Path>, data: &TensorData, units: &str) -> Result<(), ContainerError> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = serde_json::to_string(&header_for(data, units))?;
    w.write_all(header.as_bytes())?;
    w.write_all(b"\n")?;
    w.write_all(&payload_bytes(data))?;
    w.flush()?;
    Ok(())
}

/// Reads any tensor file, returning the data and its parsed header.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<(TensorData, TensorHeader), ContainerError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = Vec::new();
    let n = r.read_until(b'\n', &mut line)?;
    if n == 0 || *line.last().unwrap() != b'\n' {
        return Err(ContainerError::UnterminatedHeader);
    }
    line.pop();
    let header: TensorHeader = serde_json::from_slice(&line)?;
    if header.endianness != "little" {
        return Err(ContainerError::Endianness(header.endianness));
    }
    if header.order != "row-major" {
        return Err(ContainerError::Order(header.order));
    }

    let count: usize = header.shape.iter().product();
    let expected = count * header.dtype.byte_width();
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(ContainerError::PayloadLength {
            dtype: header.dtype,
            shape: header.shape.clone(),
            expected,
            got: payload.len(),
        });
    }

    let dim = IxDyn(&header.shape);
    let data = match header.dtype {
        Dtype::F32 => {
            let v: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            TensorData::F32(ArrayD::from_shape_vec(dim, v).unwrap())
        }
        Dtype::F64 => {
            let v: Vec<f64> = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            TensorData::F64(ArrayD::from_shape_vec(dim, v).unwrap())
        }
        Dtype::C64 => {
            let v: Vec<Complex32> = payload
                .chunks_exact(8)
                .map(|c| {
                    Complex32::new(
                        f32::from_le_bytes(c[0..4].try_into().unwrap()),
                        f32::from_le_bytes(c[4..8].try_into().unwrap()),
                    )
                })
                .collect();
            TensorData::C64(ArrayD::from_shape_vec(dim, v).unwrap())
        }
        Dtype::C128 => {
            let v: Vec<Complex64> = payload
                .chunks_exact(16)
                .map(|c| {
                    Complex64::new(
                        f64::from_le_bytes(c[0..8].try_into().unwrap()),
                        f64::from_le_bytes(c[8..16].try_into().unwrap()),
                    )
                })
                .collect();
            TensorData::C128(ArrayD::from_shape_vec(dim, v).unwrap())
        }
    };
    Ok((data, header))
}

/// Writes a real f64 tensor.
pub fn write_f64(path: impl AsRef<Path>, a: ArrayViewD<'_, f64>, units: &str) -> Result<(), ContainerError> {
    write_tensor(path, &TensorData::F64(a.to_owned()), units)
}

/// Writes a complex f64 tensor.
pub fn write_c128(path: impl AsRef<Path>, a: ArrayViewD<'_, Complex64>, units: &str) -> Result<(), ContainerError> {
    write_tensor(path, &TensorData::C128(a.to_owned()), units)
}

/// Reads a tensor that must hold f64 data.
pub fn read_f64(path: impl AsRef<Path>) -> Result<ArrayD<f64>, ContainerError> {
    match read_tensor(path)? {
        (TensorData::F64(a), _) => Ok(a),
        (other, _) => Err(ContainerError::DtypeMismatch { expected: Dtype::F64, got: other.dtype() }),
    }
}

/// Reads a tensor that must hold complex f64 data.
pub fn read_c128(path: impl AsRef<Path>) -> Result<ArrayD<Complex64>, ContainerError> {
    match read_tensor(path)? {
        (TensorData::C128(a), _) => Ok(a),
        (other, _) => Err(ContainerError::DtypeMismatch { expected: Dtype::C128, got: other.dtype() }),
    }
}
