//! JSON containers for fixtures; complex values are stored as `[re, im]` pairs.

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, C64, RMat};

/// Column-major complex matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerCMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<C64>,
}

impl From<&CMat> for SerCMat {
    fn from(m: &CMat) -> Self {
        Self { rows: m.nrows(), cols: m.ncols(), data: m.as_slice().to_vec() }
    }
}

impl From<&CVec> for SerCMat {
    fn from(v: &CVec) -> Self {
        Self { rows: v.len(), cols: 1, data: v.as_slice().to_vec() }
    }
}

impl SerCMat {
    pub fn to_matrix(&self) -> Result<CMat> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Serde(format!(
                "matrix payload has {} entries, expected {}×{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(CMat::from_column_slice(self.rows, self.cols, &self.data))
    }

    pub fn to_vector(&self) -> Result<CVec> {
        Ok(CVec::from_column_slice(self.to_matrix()?.as_slice()))
    }
}

/// Column-major real matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerRMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&RMat> for SerRMat {
    fn from(m: &RMat) -> Self {
        Self { rows: m.nrows(), cols: m.ncols(), data: m.as_slice().to_vec() }
    }
}

impl SerRMat {
    pub fn to_matrix(&self) -> Result<RMat> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Serde("real matrix payload size mismatch".into()));
        }
        Ok(RMat::from_column_slice(self.rows, self.cols, &self.data))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let s = serde_json::to_string_pretty(value)?;
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&s)?)
}
