//! Binary array container used for every persisted numeric artifact.
//!
//! Layout (little-endian throughout):
//!
//! | bytes        | field                         |
//! |--------------|-------------------------------|
//! | 4            | magic `b"VPRM"`               |
//! | 2 (`u16`)    | format version, currently `1` |
//! | 1 (`u8`)     | dtype code, `1` = `f64`       |
//! | 1 (`u8`)     | rank                          |
//! | 8·rank       | dims as `u64`                 |
//! | 8·∏dims      | row-major `f64` payload       |

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"VPRM";
pub const VERSION: u16 = 1;
pub const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayContainer {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl ArrayContainer {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        if dims.len() > u8::MAX as usize {
            return Err(Error::shape(format!("rank {} exceeds 255", dims.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn vector(values: &[f64]) -> Self {
        Self { dims: vec![values.len()], data: values.to_vec() }
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            data.extend(m.row(i).iter());
        }
        Self { dims: vec![rows, cols], data }
    }

    /// Stacks equally shaped matrices into a rank-3 container `[k, rows, cols]`.
    pub fn from_matrices(ms: &[&DMatrix<f64>]) -> Result<Self> {
        let Some(first) = ms.first() else {
            return Err(Error::shape("cannot stack zero matrices"));
        };
        let shape = first.shape();
        let mut data = Vec::with_capacity(ms.len() * shape.0 * shape.1);
        for m in ms {
            if m.shape() != shape {
                return Err(Error::shape(format!("stack member {:?} != {:?}", m.shape(), shape)));
            }
            for i in 0..shape.0 {
                data.extend(m.row(i).iter());
            }
        }
        Ok(Self { dims: vec![ms.len(), shape.0, shape.1], data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        match self.dims.as_slice() {
            &[rows, cols] => Ok(DMatrix::from_row_slice(rows, cols, &self.data)),
            &[len] => Ok(DMatrix::from_row_slice(len, 1, &self.data)),
            other => Err(Error::shape(format!("expected rank-2 array, found dims {other:?}"))),
        }
    }

    /// Splits a rank-3 container back into its matrices.
    pub fn to_matrices(&self) -> Result<Vec<DMatrix<f64>>> {
        let &[k, rows, cols] = self.dims.as_slice() else {
            return Err(Error::shape(format!("expected rank-3 array, found dims {:?}", self.dims)));
        };
        let block = rows * cols;
        Ok((0..k)
            .map(|i| DMatrix::from_row_slice(rows, cols, &self.data[i * block..(i + 1) * block]))
            .collect())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[DTYPE_F64, self.dims.len() as u8])?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut payload = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&payload)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.dims.len() + 8 * self.data.len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> std::result::Result<Self, String> {
        let mut head = [0u8; 8];
        r.read_exact(&mut head).map_err(|e| format!("truncated header: {e}"))?;
        if head[..4] != MAGIC {
            return Err(format!("bad magic {:?}", &head[..4]));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != VERSION {
            return Err(format!("unsupported format version {version}"));
        }
        if head[6] != DTYPE_F64 {
            return Err(format!("unsupported dtype code {}", head[6]));
        }
        let rank = head[7] as usize;
        let mut dims = Vec::with_capacity(rank);
        let mut buf = [0u8; 8];
        for _ in 0..rank {
            r.read_exact(&mut buf).map_err(|e| format!("truncated dims: {e}"))?;
            dims.push(u64::from_le_bytes(buf) as usize);
        }
        let len: usize = dims.iter().product();
        let mut payload = Vec::new();
        r.read_to_end(&mut payload).map_err(|e| e.to_string())?;
        if payload.len() != 8 * len {
            return Err(format!("payload has {} bytes, dims {dims:?} need {}", payload.len(), 8 * len));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_from(bytes.as_slice())
            .map_err(|reason| Error::Format { path: path.to_path_buf(), reason })
    }
}

/// Write-temp-then-rename so readers never observe a half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_atomic(path, text.as_bytes())
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })
}
