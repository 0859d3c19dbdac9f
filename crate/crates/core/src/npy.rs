//! Reading and writing arrays in the NPY 1.0 format.
//!
//! Only little-endian `<f4`, `<f8` and `<i8` payloads in C order are supported.
//! The writer emits the same header layout as `numpy.save` (64-byte aligned,
//! space padded, newline terminated) so files written here are byte-identical
//! to the ones numpy produces for the same array.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 6] = *b"\x93NUMPY";

const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F4,
    F8,
    I8,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F4 => "<f4",
            Dtype::F8 => "<f8",
            Dtype::I8 => "<i8",
        }
    }

    pub fn from_descr(descr: &str) -> Result<Self> {
        match descr {
            "<f4" => Ok(Dtype::F4),
            "<f8" => Ok(Dtype::F8),
            "<i8" => Ok(Dtype::I8),
            other => Err(Error::Npy(format!("unsupported dtype descriptor {other:?}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 | Dtype::I8 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
}

impl Header {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dict(&self) -> String {
        let shape = match self.shape.as_slice() {
            [n] => format!("({n},)"),
            dims => {
                let parts: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
                format!("({})", parts.join(", "))
            }
        };
        format!(
            "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
            self.dtype.descr(),
            shape
        )
    }

    fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let dict = self.dict();
        // magic + version + u16 length, then dict, padding and '\n'
        let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
        let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
        let header_len = dict.len() + padding + 1;
        w.write_all(&MAGIC)?;
        w.write_all(&[1, 0])?;
        w.write_all(&(header_len as u16).to_le_bytes())?;
        w.write_all(dict.as_bytes())?;
        w.write_all(&vec![b' '; padding])?;
        w.write_all(b"\n")
    }

    fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut preamble = [0u8; 8];
        r.read_exact(&mut preamble)
            .map_err(|e| Error::Npy(format!("truncated preamble: {e}")))?;
        if preamble[..6] != MAGIC {
            return Err(Error::Npy("bad magic string".into()));
        }
        let header_len = match (preamble[6], preamble[7]) {
            (1, 0) => {
                let mut b = [0u8; 2];
                r.read_exact(&mut b)
                    .map_err(|e| Error::Npy(format!("truncated header length: {e}")))?;
                u16::from_le_bytes(b) as usize
            }
            (2, 0) => {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)
                    .map_err(|e| Error::Npy(format!("truncated header length: {e}")))?;
                u32::from_le_bytes(b) as usize
            }
            (major, minor) => {
                return Err(Error::Npy(format!("unsupported version {major}.{minor}")))
            }
        };
        let mut raw = vec![0u8; header_len];
        r.read_exact(&mut raw)
            .map_err(|e| Error::Npy(format!("truncated header: {e}")))?;
        let text = std::str::from_utf8(&raw).map_err(|_| Error::Npy("header is not utf-8".into()))?;
        parse_dict(text)
    }
}

fn dict_value<'a>(text: &'a str, key: &str) -> Result<&'a str> {
    let quoted = format!("'{key}'");
    let start = text
        .find(&quoted)
        .ok_or_else(|| Error::Npy(format!("header lacks key {key}")))?;
    let rest = &text[start + quoted.len()..];
    let rest = rest
        .trim_start()
        .strip_prefix(':')
        .ok_or_else(|| Error::Npy(format!("expected ':' after {key}")))?;
    Ok(rest.trim_start())
}

fn parse_dict(text: &str) -> Result<Header> {
    let descr = dict_value(text, "descr")?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|s| s.split('\'').next())
        .ok_or_else(|| Error::Npy("descr is not a string".into()))?;
    let dtype = Dtype::from_descr(descr)?;

    let fortran = dict_value(text, "fortran_order")?;
    if fortran.starts_with("True") {
        return Err(Error::Npy("fortran_order arrays are not supported".into()));
    } else if !fortran.starts_with("False") {
        return Err(Error::Npy("fortran_order is not a boolean".into()));
    }

    let shape = dict_value(text, "shape")?;
    let inner = shape
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| Error::Npy("shape is not a tuple".into()))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Npy(format!("bad shape entry {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Header { dtype, shape })
}

/// A decoded array: header plus the payload widened to 64 bits.
#[derive(Debug, Clone, PartialEq)]
pub enum NpyArray {
    Float { header: Header, data: Vec<f64> },
    Int { header: Header, data: Vec<i64> },
}

impl NpyArray {
    pub fn header(&self) -> &Header {
        match self {
            NpyArray::Float { header, .. } | NpyArray::Int { header, .. } => header,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.header().shape
    }
}

pub fn read<R: Read>(r: &mut R) -> Result<NpyArray> {
    let header = Header::read(r)?;
    let n = header.len();
    let mut bytes = vec![0u8; n * header.dtype.width()];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Npy(format!("payload shorter than shape {:?}", header.shape)))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::Npy(e.to_string()))? != 0 {
        return Err(Error::Npy(format!(
            "payload longer than shape {:?}",
            header.shape
        )));
    }
    Ok(match header.dtype {
        Dtype::F4 => NpyArray::Float {
            data: bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            header,
        },
        Dtype::F8 => NpyArray::Float {
            data: bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            header,
        },
        Dtype::I8 => NpyArray::Int {
            data: bytes
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            header,
        },
    })
}

pub fn read_path(path: &Path) -> Result<NpyArray> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read(&mut BufReader::new(file))
}

/// Writes a float payload (row-major) with the given dtype.
pub fn write_f64<W: Write>(w: &mut W, shape: &[usize], data: &[f64], dtype: Dtype) -> Result<()> {
    let header = Header {
        dtype,
        shape: shape.to_vec(),
    };
    if header.len() != data.len() {
        return Err(Error::Shape(format!(
            "{} values do not fill shape {:?}",
            data.len(),
            shape
        )));
    }
    let io = |e: std::io::Error| Error::Npy(e.to_string());
    header.write(w).map_err(io)?;
    for &v in data {
        match dtype {
            Dtype::F4 => w.write_all(&(v as f32).to_le_bytes()),
            Dtype::F8 => w.write_all(&v.to_le_bytes()),
            Dtype::I8 => w.write_all(&(v as i64).to_le_bytes()),
        }
        .map_err(io)?;
    }
    Ok(())
}

pub fn write_i64<W: Write>(w: &mut W, shape: &[usize], data: &[i64]) -> Result<()> {
    let header = Header {
        dtype: Dtype::I8,
        shape: shape.to_vec(),
    };
    if header.len() != data.len() {
        return Err(Error::Shape(format!(
            "{} values do not fill shape {:?}",
            data.len(),
            shape
        )));
    }
    let io = |e: std::io::Error| Error::Npy(e.to_string());
    header.write(w).map_err(io)?;
    for &v in data {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Row-major float payload of a matrix.
pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter().copied());
    }
    out
}

pub fn save_matrix(path: &Path, m: &DMatrix<f64>, dtype: Dtype) -> Result<()> {
    let mut w = create(path)?;
    write_f64(&mut w, &[m.nrows(), m.ncols()], &matrix_to_rows(m), dtype)?;
    finish(path, w)
}

pub fn save_vector(path: &Path, v: &DVector<f64>) -> Result<()> {
    let mut w = create(path)?;
    write_f64(&mut w, &[v.len()], v.as_slice(), Dtype::F8)?;
    finish(path, w)
}

pub fn save_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let data: Vec<i64> = labels.iter().map(|&l| l as i64).collect();
    let mut w = create(path)?;
    write_i64(&mut w, &[data.len()], &data)?;
    finish(path, w)
}

/// Loads a 2-D float array as a matrix.
pub fn load_matrix(path: &Path) -> Result<DMatrix<f64>> {
    match read_path(path)? {
        NpyArray::Float { header, data } => match header.shape.as_slice() {
            &[rows, cols] => Ok(DMatrix::from_row_slice(rows, cols, &data)),
            other => Err(Error::Shape(format!(
                "{}: expected a 2-D array, found shape {other:?}",
                path.display()
            ))),
        },
        NpyArray::Int { .. } => Err(Error::Npy(format!(
            "{}: expected a float array",
            path.display()
        ))),
    }
}

/// Loads a 1-D float array as a vector.
pub fn load_vector(path: &Path) -> Result<DVector<f64>> {
    match read_path(path)? {
        NpyArray::Float { header, data } if header.shape.len() == 1 => Ok(DVector::from_vec(data)),
        arr => Err(Error::Shape(format!(
            "{}: expected a 1-D float array, found shape {:?}",
            path.display(),
            arr.shape()
        ))),
    }
}

/// Loads a 1-D integer array (float arrays holding integral values are accepted too).
pub fn load_ints(path: &Path) -> Result<Vec<i64>> {
    let arr = read_path(path)?;
    if arr.shape().len() != 1 {
        return Err(Error::Shape(format!(
            "{}: expected a 1-D array, found shape {:?}",
            path.display(),
            arr.shape()
        )));
    }
    match arr {
        NpyArray::Int { data, .. } => Ok(data),
        NpyArray::Float { data, .. } => data
            .into_iter()
            .map(|v| {
                if v.fract() == 0.0 && v.is_finite() {
                    Ok(v as i64)
                } else {
                    Err(Error::Npy(format!("{}: non-integral label {v}", path.display())))
                }
            })
            .collect(),
    }
}
