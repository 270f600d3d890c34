//! Synthetic degradations: `lr = (hr ⊗ k)↓s + n`, plus the PCA-encoded
//! degradation map handed to the non-blind network.

mod kernel;
mod map;
mod noise;
mod pca;
mod resize;

pub use kernel::{blur, blur_columns, gaussian_kernel, BlurKernel, BLUR_KERNEL_SIZE};
pub use map::{encode_degradation, encode_degradation_columns, DegradationMap, NOISE_MAP_SCALE};
pub use noise::{add_awgn, add_awgn_columns};
pub use pca::{pca_fit, PcaBasis, DEFAULT_PCA_DIM, DEFAULT_PCA_SAMPLES};
pub use resize::{bicubic_resize, cubic_weight};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const KERNEL_WIDTH_RANGE: (f64, f64) = (0.2, 3.0);
pub const NOISE_LEVEL_RANGE: (f64, f64) = (0.0, 75.0);
pub const SCALES: [usize; 3] = [2, 3, 4];

/// Ground-truth degradation: Gaussian width, noise level on the 0–255 scale,
/// and downsampling factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationParams {
    kernel_width: f64,
    noise_level: f64,
    scale: usize,
}

pub(crate) fn check_range(name: &str, value: f64, (lo, hi): (f64, f64)) -> Result<()> {
    if !(value >= lo && value <= hi) {
        return Err(Error::param(format!("{name} {value} outside [{lo}, {hi}]")));
    }
    Ok(())
}

pub(crate) fn check_scale(scale: usize) -> Result<()> {
    if !SCALES.contains(&scale) {
        return Err(Error::param(format!("scale {scale} not in {SCALES:?}")));
    }
    Ok(())
}

impl DegradationParams {
    pub fn new(kernel_width: f64, noise_level: f64, scale: usize) -> Result<Self> {
        check_range("kernel width", kernel_width, KERNEL_WIDTH_RANGE)?;
        check_range("noise level", noise_level, NOISE_LEVEL_RANGE)?;
        check_scale(scale)?;
        Ok(Self {
            kernel_width,
            noise_level,
            scale,
        })
    }

    pub fn kernel_width(&self) -> f64 {
        self.kernel_width
    }

    pub fn noise_level(&self) -> f64 {
        self.noise_level
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn kernel(&self) -> BlurKernel {
        gaussian_kernel(self.kernel_width, BLUR_KERNEL_SIZE).expect("validated width")
    }
}

fn check_divisible<E: Real>(hr: &Tensor<E>, s: usize) -> Result<()> {
    if !hr.h().is_multiple_of(s) || !hr.w().is_multiple_of(s) || hr.h() == 0 || hr.w() == 0 {
        return Err(Error::shape(format!(
            "HR size {}x{} is not a positive multiple of scale {s}",
            hr.h(),
            hr.w()
        )));
    }
    Ok(())
}

/// Blur, antialiased bicubic downsample by `s`, then AWGN, in that order.
pub fn degrade<E: Real>(hr: &Tensor<E>, params: &DegradationParams, seed: u64) -> Result<Tensor<E>> {
    let s = params.scale;
    check_divisible(hr, s)?;
    let kernel = params.kernel();
    let blurred = blur(hr, &kernel);
    let lr = bicubic_resize(&blurred, hr.h() / s, hr.w() / s, true)?;
    add_awgn(&lr, params.noise_level, seed)
}

/// Per-LR-column `(width, noise)` schedule rising linearly from `lo` at the
/// first column to `hi` at the last.
pub fn spatial_schedule(lr_width: usize, eps_range: (f64, f64), sigma_range: (f64, f64)) -> Vec<(f64, f64)> {
    let lerp = |(lo, hi): (f64, f64), j: usize| {
        if lr_width <= 1 {
            lo
        } else {
            lo + (hi - lo) * (j as f64 / (lr_width - 1) as f64)
        }
    };
    (0..lr_width)
        .map(|j| (lerp(eps_range, j), lerp(sigma_range, j)))
        .collect()
}

/// Spatially-variant degradation: LR column `j` uses the width and noise
/// level of [`spatial_schedule`]; HR column `x` is blurred with the kernel
/// of LR column `x / s`.
pub fn degrade_spatial<E: Real>(
    hr: &Tensor<E>,
    eps_range: (f64, f64),
    sigma_range: (f64, f64),
    s: usize,
    seed: u64,
) -> Result<Tensor<E>> {
    for eps in [eps_range.0, eps_range.1] {
        check_range("kernel width", eps, KERNEL_WIDTH_RANGE)?;
    }
    for sigma in [sigma_range.0, sigma_range.1] {
        check_range("noise level", sigma, NOISE_LEVEL_RANGE)?;
    }
    check_scale(s)?;
    check_divisible(hr, s)?;
    let schedule = spatial_schedule(hr.w() / s, eps_range, sigma_range);
    let kernels = schedule
        .iter()
        .map(|&(eps, _)| gaussian_kernel(eps, BLUR_KERNEL_SIZE))
        .collect::<Result<Vec<_>>>()?;
    let hr_kernels: Vec<&BlurKernel> = (0..hr.w()).map(|x| &kernels[x / s]).collect();
    let blurred = blur_columns(hr, &hr_kernels)?;
    let lr = bicubic_resize(&blurred, hr.h() / s, hr.w() / s, true)?;
    let sigmas: Vec<f64> = schedule.iter().map(|&(_, sigma)| sigma).collect();
    add_awgn_columns(&lr, &sigmas, seed)
}
