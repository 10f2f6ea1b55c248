//! Dense 2D/3D real fields used for velocity models, images, and gathers.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Row-major 2D field, `nz` rows (depth) by `nx` columns (lateral).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field2 {
    pub nz: usize,
    pub nx: usize,
    data: Vec<f64>,
}

impl Field2 {
    pub fn zeros(nz: usize, nx: usize) -> Self {
        Field2 {
            nz,
            nx,
            data: vec![0.0; nz * nx],
        }
    }

    pub fn constant(nz: usize, nx: usize, value: f64) -> Self {
        Field2 {
            nz,
            nx,
            data: vec![value; nz * nx],
        }
    }

    pub fn from_vec(nz: usize, nx: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nz * nx {
            return Err(Error::shape(format!(
                "expected {}x{} = {} values, got {}",
                nz,
                nx,
                nz * nx,
                data.len()
            )));
        }
        Ok(Field2 { nz, nx, data })
    }

    pub fn from_fn(nz: usize, nx: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(nz * nx);
        for iz in 0..nz {
            for ix in 0..nx {
                data.push(f(iz, ix));
            }
        }
        Field2 { nz, nx, data }
    }

    #[inline]
    pub fn at(&self, iz: usize, ix: usize) -> f64 {
        self.data[iz * self.nx + ix]
    }

    #[inline]
    pub fn at_mut(&mut self, iz: usize, ix: usize) -> &mut f64 {
        &mut self.data[iz * self.nx + ix]
    }

    #[inline]
    pub fn row(&self, iz: usize) -> &[f64] {
        &self.data[iz * self.nx..(iz + 1) * self.nx]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Field2) -> bool {
        self.nz == other.nz && self.nx == other.nx
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field2 {
        Field2 {
            nz: self.nz,
            nx: self.nx,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Field2 {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Field2) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sub(&self, other: &Field2) -> Field2 {
        debug_assert!(self.same_shape(other));
        Field2 {
            nz: self.nz,
            nx: self.nx,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn dot(&self, other: &Field2) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

/// Offset-major 3D volume: `n_offsets` slices of `nz` x `nx` each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Volume3 {
    pub nz: usize,
    pub nx: usize,
    pub n_offsets: usize,
    data: Vec<f64>,
}

impl Volume3 {
    pub fn zeros(nz: usize, nx: usize, n_offsets: usize) -> Self {
        Volume3 {
            nz,
            nx,
            n_offsets,
            data: vec![0.0; nz * nx * n_offsets],
        }
    }

    #[inline]
    pub fn at(&self, iz: usize, ix: usize, ih: usize) -> f64 {
        self.data[ih * self.nz * self.nx + iz * self.nx + ix]
    }

    #[inline]
    pub fn slice(&self, ih: usize) -> &[f64] {
        let n = self.nz * self.nx;
        &self.data[ih * n..(ih + 1) * n]
    }

    #[inline]
    pub fn slice_mut(&mut self, ih: usize) -> &mut [f64] {
        let n = self.nz * self.nx;
        &mut self.data[ih * n..(ih + 1) * n]
    }

    pub fn slice_field(&self, ih: usize) -> Field2 {
        Field2 {
            nz: self.nz,
            nx: self.nx,
            data: self.slice(ih).to_vec(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn add_assign(&mut self, other: &Volume3) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Percentile with linear interpolation between order statistics, over a
/// pre-sorted slice. `p` in [0, 100].
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = (p / 100.0) * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi.min(n - 1)] * frac
}

/// Percentile of an unsorted slice (copies and sorts).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    percentile_sorted(&v, p)
}
