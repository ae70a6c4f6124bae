//! Dense temperature fields and their binary file format.
//!
//! A field file is one JSON header line followed by raw little-endian `f64`
//! values in row-major (x, y, z) order.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureField {
    dims: [usize; 3],
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dims: [usize; 3],
    dtype: String,
    order: String,
    units: String,
}

impl TemperatureField {
    pub fn new(dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        if values.len() != n {
            return Err(Error::Dimension(format!(
                "field {dims:?} needs {n} values, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite temperature at flat index {pos}"
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn uniform(dims: [usize; 3], value: f64) -> Result<Self> {
        Self::new(dims, vec![value; dims[0] * dims[1] * dims[2]])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize, l: usize) -> f64 {
        self.values[(i * self.dims[1] + j) * self.dims[2] + l]
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            dims: self.dims,
            dtype: "f64le".into(),
            order: "row-major-xyz".into(),
            units: "K".into(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: Header = serde_json::from_str(line.trim_end())?;
        if header.dtype != "f64le" || header.order != "row-major-xyz" || header.units != "K" {
            return Err(Error::Format(format!(
                "unsupported field encoding {}/{}/{}",
                header.dtype, header.order, header.units
            )));
        }
        let n = header.dims.iter().product::<usize>();
        let mut bytes = Vec::with_capacity(n * 8);
        r.read_to_end(&mut bytes)?;
        if bytes.len() != n * 8 {
            return Err(Error::Format(format!(
                "expected {} payload bytes, found {}",
                n * 8,
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(header.dims, values)
    }
}
