use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const BLUR_KERNEL_SIZE: usize = 15;

/// Normalized isotropic Gaussian on a `size x size` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    size: usize,
    weights: Vec<f64>,
}

impl BlurKernel {
    /// Wraps explicit row-major weights; they must be non-negative and sum
    /// to 1 within 1e-6.
    pub fn from_weights(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size.is_multiple_of(2) || weights.len() != size * size {
            return Err(Error::param(format!("{} weights for an odd {size}x{size} kernel", weights.len())));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::param("blur kernel must be non-negative and sum to 1"));
        }
        Ok(Self { size, weights })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Row-major weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn at(&self, a: usize, b: usize) -> f64 {
        self.weights[a * self.size + b]
    }
}

/// `entry(a, b) ∝ exp(-((a - c)² + (b - c)²) / (2ε²))`, `c = (p - 1) / 2`,
/// normalized to sum 1.
pub fn gaussian_kernel(width: f64, size: usize) -> Result<BlurKernel> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::param(format!("kernel width must be positive, got {width}")));
    }
    if size.is_multiple_of(2) {
        return Err(Error::param(format!("kernel size must be odd, got {size}")));
    }
    let c = (size / 2) as f64;
    let denom = 2.0 * width * width;
    let mut weights: Vec<f64> = (0..size * size)
        .map(|i| {
            let (a, b) = ((i / size) as f64 - c, (i % size) as f64 - c);
            (-(a * a + b * b) / denom).exp()
        })
        .collect();
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    Ok(BlurKernel { size, weights })
}

/// Blur every channel with one kernel, replicating edge pixels.
pub fn blur<E: Real>(img: &Tensor<E>, kernel: &BlurKernel) -> Tensor<E> {
    let per_column = vec![kernel; img.w()];
    blur_columns(img, &per_column).expect("one kernel per column")
}

/// Blur where output column `x` uses `kernels[x]`; shared by the uniform and
/// spatially-variant paths so both give identical bits for equal kernels.
pub fn blur_columns<E: Real>(img: &Tensor<E>, kernels: &[&BlurKernel]) -> Result<Tensor<E>> {
    let [n, c, h, w] = img.shape();
    if kernels.len() != w {
        return Err(Error::shape(format!("{} column kernels for width {w}", kernels.len())));
    }
    let Some(p) = kernels.first().map(|k| k.size) else {
        return Ok(img.clone());
    };
    if kernels.iter().any(|k| k.size != p) {
        return Err(Error::param("column kernels must share one size"));
    }
    let half = p / 2;
    let (ph, pw) = (h + 2 * half, w + 2 * half);
    let mut padded = vec![0.0f64; ph * pw];
    let mut out = Tensor::zeros(img.shape());
    for b in 0..n {
        for ch in 0..c {
            let src = img.plane(b, ch);
            for y in 0..ph {
                let sy = y.saturating_sub(half).min(h - 1);
                for x in 0..pw {
                    let sx = x.saturating_sub(half).min(w - 1);
                    padded[y * pw + x] = src[sy * w + sx].as_f64();
                }
            }
            let base = (b * c + ch) * h * w;
            let dst = &mut out.data_mut()[base..base + h * w];
            for y in 0..h {
                for x in 0..w {
                    let kw = kernels[x].weights();
                    let mut acc = 0.0;
                    // symmetric kernel: correlation and convolution agree
                    for a in 0..p {
                        let row = &padded[(y + a) * pw + x..(y + a) * pw + x + p];
                        let krow = &kw[a * p..(a + 1) * p];
                        acc += row.iter().zip(krow).map(|(v, k)| v * k).sum::<f64>();
                    }
                    dst[y * w + x] = E::from_f64(acc);
                }
            }
        }
    }
    Ok(out)
}
