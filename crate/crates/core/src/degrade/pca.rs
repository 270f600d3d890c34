use nalgebra::{DMatrix, SymmetricEigen};

use super::kernel::{gaussian_kernel, BlurKernel, BLUR_KERNEL_SIZE};
use super::KERNEL_WIDTH_RANGE;
use crate::error::{Error, Result};
use crate::tensor::io::TenArray;

pub const DEFAULT_PCA_DIM: usize = 15;
pub const DEFAULT_PCA_SAMPLES: usize = 1000;

/// Mean kernel and top principal directions of vectorized blur kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaBasis {
    mean: Vec<f64>,
    /// `dim` rows of length `mean.len()`, orthonormal, by decreasing variance.
    rows: Vec<Vec<f64>>,
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn kernel_len(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Fits on [`DEFAULT_PCA_SAMPLES`] widths evenly spaced over the legal
    /// range, keeping [`DEFAULT_PCA_DIM`] components.
    pub fn default_fit() -> Self {
        let (lo, hi) = KERNEL_WIDTH_RANGE;
        let n = DEFAULT_PCA_SAMPLES;
        let grid: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        pca_fit(&grid, DEFAULT_PCA_DIM).expect("default grid is non-degenerate")
    }

    /// The leading `dim` components.
    pub fn truncated(&self, dim: usize) -> Result<Self> {
        if dim == 0 || dim > self.dim() {
            return Err(Error::param(format!("cannot keep {dim} of {} components", self.dim())));
        }
        Ok(Self {
            mean: self.mean.clone(),
            rows: self.rows[..dim].to_vec(),
        })
    }

    pub fn project(&self, kernel: &BlurKernel) -> Result<Vec<f64>> {
        let w = kernel.weights();
        if w.len() != self.mean.len() {
            return Err(Error::shape(format!(
                "kernel has {} entries, basis expects {}",
                w.len(),
                self.mean.len()
            )));
        }
        Ok(self
            .rows
            .iter()
            .map(|row| row.iter().zip(w).zip(&self.mean).map(|((b, k), m)| b * (k - m)).sum())
            .collect())
    }

    /// `mean + basisᵀ · coeffs`.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (row, &c) in self.rows.iter().zip(coeffs) {
            out.iter_mut().zip(row).for_each(|(o, b)| *o += c * b);
        }
        out
    }

    /// Stored as two arrays: `mean` (rank 1) and `basis` (rank 2).
    pub fn to_entries(&self) -> Vec<(String, TenArray)> {
        let mean = TenArray {
            dims: vec![self.mean.len()],
            data: self.mean.iter().map(|&v| v as f32).collect(),
        };
        let basis = TenArray {
            dims: vec![self.rows.len(), self.mean.len()],
            data: self.rows.iter().flatten().map(|&v| v as f32).collect(),
        };
        vec![("mean".into(), mean), ("basis".into(), basis)]
    }

    pub fn from_entries(entries: &[(String, TenArray)]) -> Result<Self> {
        let find = |name: &str| {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, a)| a)
                .ok_or_else(|| Error::Format(format!("PCA file lacks `{name}`")))
        };
        let (mean, basis) = (find("mean")?, find("basis")?);
        if mean.dims.len() != 1 || basis.dims.len() != 2 || basis.dims[1] != mean.dims[0] {
            return Err(Error::Format(format!(
                "PCA arrays have dims {:?} and {:?}",
                mean.dims, basis.dims
            )));
        }
        let len = mean.dims[0];
        Ok(Self {
            mean: mean.data.iter().map(|&v| v as f64).collect(),
            rows: basis
                .data
                .chunks(len.max(1))
                .map(|r| r.iter().map(|&v| v as f64).collect())
                .collect(),
        })
    }
}

/// Principal components of the 15x15 Gaussian kernels for `widths`: the
/// top `dim` eigenvectors of the mean-subtracted covariance, each signed so
/// its first non-negligible entry is positive.
pub fn pca_fit(widths: &[f64], dim: usize) -> Result<PcaBasis> {
    let p = BLUR_KERNEL_SIZE * BLUR_KERNEL_SIZE;
    if dim == 0 || dim > p {
        return Err(Error::param(format!("PCA dimension {dim} outside 1..={p}")));
    }
    if widths.len() < 2 || widths.iter().all(|&w| w == widths[0]) {
        return Err(Error::Rank("PCA needs at least two distinct kernel widths".into()));
    }
    let kernels = widths
        .iter()
        .map(|&w| gaussian_kernel(w, BLUR_KERNEL_SIZE))
        .collect::<Result<Vec<_>>>()?;
    let n = kernels.len() as f64;
    let mut mean = vec![0.0; p];
    for k in &kernels {
        mean.iter_mut().zip(k.weights()).for_each(|(m, v)| *m += v / n);
    }
    let centred = DMatrix::from_fn(kernels.len(), p, |i, j| kernels[i].weights()[j] - mean[j]);
    let cov = (centred.transpose() * &centred) / n;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    if eig.eigenvalues[order[0]] <= 0.0 {
        return Err(Error::Rank("kernel covariance is zero".into()));
    }
    let rows = order[..dim]
        .iter()
        .map(|&c| {
            let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
            }
            v
        })
        .collect();
    Ok(PcaBasis { mean, rows })
}
