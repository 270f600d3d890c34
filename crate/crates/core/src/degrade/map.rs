use super::kernel::BlurKernel;
use super::pca::PcaBasis;
use super::{check_range, NOISE_LEVEL_RANGE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Noise levels are stored as `σ / NOISE_MAP_SCALE`, mapping the legal range
/// onto `[0, 1]`.
pub const NOISE_MAP_SCALE: f64 = 75.0;

/// `(1, t + 1, H, W)`: PCA coefficients of the blur kernel in channels
/// `0..t`, normalized noise level in channel `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationMap {
    tensor: Tensor<f32>,
}

impl DegradationMap {
    pub fn from_tensor(tensor: Tensor<f32>) -> Result<Self> {
        if tensor.n() != 1 || tensor.c() < 2 {
            return Err(Error::shape(format!("degradation map shape {:?}", tensor.shape())));
        }
        Ok(Self { tensor })
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.tensor
    }

    pub fn channels(&self) -> usize {
        self.tensor.c()
    }

    pub fn height(&self) -> usize {
        self.tensor.h()
    }

    pub fn width(&self) -> usize {
        self.tensor.w()
    }
}

fn column_vector(kernel: &BlurKernel, sigma: f64, basis: &PcaBasis) -> Result<Vec<f32>> {
    check_range("noise level", sigma, NOISE_LEVEL_RANGE)?;
    let mut v: Vec<f32> = basis.project(kernel)?.into_iter().map(|c| c as f32).collect();
    v.push((sigma / NOISE_MAP_SCALE) as f32);
    Ok(v)
}

/// Stretches the `(t + 1)`-vector of one degradation over an `h x w` grid.
pub fn encode_degradation(kernel: &BlurKernel, sigma: f64, basis: &PcaBasis, h: usize, w: usize) -> Result<DegradationMap> {
    let v = column_vector(kernel, sigma, basis)?;
    let tensor = Tensor::from_fn([1, v.len(), h, w], |[_, c, _, _]| v[c]);
    Ok(DegradationMap { tensor })
}

/// Map for a spatially-variant degradation: column `j` encodes `columns[j]`.
pub fn encode_degradation_columns(columns: &[(&BlurKernel, f64)], basis: &PcaBasis, h: usize) -> Result<DegradationMap> {
    let vectors = columns
        .iter()
        .map(|&(k, s)| column_vector(k, s, basis))
        .collect::<Result<Vec<_>>>()?;
    let ch = basis.dim() + 1;
    let tensor = Tensor::from_fn([1, ch, h, columns.len()], |[_, c, _, x]| vectors[x][c]);
    Ok(DegradationMap { tensor })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::gaussian_kernel;

    #[test]
    fn shape_constancy_and_noise_channel() {
        let basis = PcaBasis::default_fit();
        let k = gaussian_kernel(1.3, 15).unwrap();
        let m = encode_degradation(&k, 15.0, &basis, 6, 7).unwrap();
        assert_eq!(m.tensor().shape(), [1, 16, 6, 7]);
        for c in 0..16 {
            let plane = m.tensor().plane(0, c);
            let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / plane.len() as f64;
            let var = plane.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>();
            assert_eq!(var, 0.0);
        }
        assert!((m.tensor().at([0, 15, 0, 0]) - 0.2).abs() < 1e-7);
        let zero = encode_degradation(&k, 0.0, &basis, 3, 3).unwrap();
        assert!(zero.tensor().plane(0, 15).iter().all(|&v| v == 0.0));
        assert!(encode_degradation(&k, 80.0, &basis, 3, 3).is_err());
        assert!(encode_degradation(&k, -1.0, &basis, 3, 3).is_err());
    }

    #[test]
    fn distinct_widths_separate() {
        let basis = PcaBasis::default_fit();
        let a = encode_degradation(&gaussian_kernel(0.8, 15).unwrap(), 10.0, &basis, 1, 1).unwrap();
        let b = encode_degradation(&gaussian_kernel(1.6, 15).unwrap(), 10.0, &basis, 1, 1).unwrap();
        let d: f64 = (0..15)
            .map(|c| (a.tensor().data()[c] as f64 - b.tensor().data()[c] as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(d > 0.01, "{d}");
    }
}
