use std::path::Path;

use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const BANK_MAGIC: &[u8; 4] = b"SSFB";

/// `N × d` per-Gaussian features plus accumulated weight per row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    n: usize,
    dim: usize,
    data: Vec<f64>,
    coverage: Vec<f64>,
}

impl FeatureBank {
    pub fn new(n: usize, dim: usize, data: Vec<f64>, coverage: Vec<f64>) -> Result<Self> {
        if data.len() != n * dim || coverage.len() != n {
            return Err(Error::Shape(format!(
                "feature bank {n}x{dim} given {} values and {} coverage entries",
                data.len(),
                coverage.len()
            )));
        }
        if data.iter().chain(&coverage).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature bank".into()));
        }
        Ok(FeatureBank {
            n,
            dim,
            data,
            coverage,
        })
    }

    /// All-zero bank with zero coverage ("no semantic evidence").
    pub fn zeros(n: usize, dim: usize) -> Self {
        FeatureBank {
            n,
            dim,
            data: vec![0.0; n * dim],
            coverage: vec![0.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn coverage(&self) -> &[f64] {
        &self.coverage
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.n, self.dim], self.data.clone()).unwrap()
    }

    pub fn permuted(&self, perm: &[usize]) -> FeatureBank {
        FeatureBank {
            n: perm.len(),
            dim: self.dim,
            data: perm.iter().flat_map(|&i| self.row(i).to_vec()).collect(),
            coverage: perm.iter().map(|&i| self.coverage[i]).collect(),
        }
    }

    pub fn rounded_to_f32(&self) -> FeatureBank {
        FeatureBank {
            n: self.n,
            dim: self.dim,
            data: self.data.iter().map(|&v| v as f32 as f64).collect(),
            coverage: self.coverage.iter().map(|&v| v as f32 as f64).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * (self.data.len() + self.n));
        out.extend_from_slice(BANK_MAGIC);
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for &v in self.data.iter().chain(&self.coverage) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FeatureBank> {
        if bytes.len() < 12 || &bytes[..4] != BANK_MAGIC {
            return Err(Error::parse("byte 0", "bad feature bank magic"));
        }
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let expect = 12 + 4 * (n * dim + n);
        if bytes.len() != expect {
            return Err(Error::parse(
                format!("byte {}", bytes.len().min(expect)),
                format!("feature bank {n}x{dim} needs {expect} bytes, found {}", bytes.len()),
            ));
        }
        let vals: Vec<f64> = bytes[12..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let (data, coverage) = vals.split_at(n * dim);
        FeatureBank::new(n, dim, data.to_vec(), coverage.to_vec())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::util::write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FeatureBank> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        FeatureBank::from_bytes(&bytes)
    }
}
