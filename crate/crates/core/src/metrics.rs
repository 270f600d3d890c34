//! PSNR and SSIM on the luma channel of the 16..235 studio-range YCbCr
//! transform, computed on the 0..255 scale. Inputs are RGB in `[0, 1]` and
//! are clamped before conversion. Batched tensors are scored per item and
//! averaged.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Luma planes of every batch item, row-major, `(n, h * w)`.
pub fn luma<E: Real>(t: &Tensor<E>) -> Result<Vec<Vec<f64>>> {
    if t.c() != 3 {
        return Err(Error::shape(format!("expected RGB, got {} channels", t.c())));
    }
    Ok((0..t.n())
        .map(|n| {
            let (r, g, b) = (t.plane(n, 0), t.plane(n, 1), t.plane(n, 2));
            (0..r.len())
                .map(|i| {
                    let v = |x: E| x.as_f64().clamp(0.0, 1.0);
                    65.481 * v(r[i]) + 128.553 * v(g[i]) + 24.966 * v(b[i]) + 16.0
                })
                .collect()
        })
        .collect())
}

fn check_pair<E: Real>(a: &Tensor<E>, b: &Tensor<E>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("metric inputs differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// PSNR of the luma channel after cropping `border` pixels from each side,
/// capped at 99 dB.
pub fn psnr_y<E: Real>(a: &Tensor<E>, b: &Tensor<E>, border: usize) -> Result<f64> {
    check_pair(a, b)?;
    let (h, w) = (a.h(), a.w());
    if 2 * border >= h || 2 * border >= w {
        return Err(Error::shape(format!("border {border} leaves nothing of a {h}x{w} image")));
    }
    let (ya, yb) = (luma(a)?, luma(b)?);
    let mut total = 0.0;
    for (pa, pb) in ya.iter().zip(&yb) {
        let mut sse = 0.0;
        for y in border..h - border {
            for x in border..w - border {
                let d = pa[y * w + x] - pb[y * w + x];
                sse += d * d;
            }
        }
        let mse = sse / ((h - 2 * border) * (w - 2 * border)) as f64;
        total += psnr_from_mse(mse);
    }
    Ok(total / ya.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (255.0 * 255.0 / mse).log10()).min(PSNR_CAP)
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable valid-mode filtering of a `h * w` plane.
fn filter_valid(p: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|j| g[j] * p[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let g = gaussian_window();
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, h, w, &g);
    let mu_b = filter_valid(b, h, w, &g);
    let aa = filter_valid(&prod(|x, _| x * x), h, w, &g);
    let bb = filter_valid(&prod(|_, y| y * y), h, w, &g);
    let ab = filter_valid(&prod(|x, y| x * y), h, w, &g);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    total / n as f64
}

/// Single-scale SSIM of the luma channel: 11x11 Gaussian window
/// (sigma 1.5), mean over valid window positions.
pub fn ssim_y<E: Real>(a: &Tensor<E>, b: &Tensor<E>) -> Result<f64> {
    check_pair(a, b)?;
    let (h, w) = (a.h(), a.w());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(format!("{h}x{w} image is smaller than the SSIM window")));
    }
    let (ya, yb) = (luma(a)?, luma(b)?);
    let total: f64 = ya.iter().zip(&yb).map(|(pa, pb)| ssim_plane(pa, pb, h, w)).sum();
    Ok(total / ya.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(h: usize, w: usize, y: f64) -> Tensor<f64> {
        Tensor::full([1, 3, h, w], (y - 16.0) / 219.0)
    }

    /// Window sums evaluated per position without separability.
    fn ssim_brute(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
        let g = gaussian_window();
        let mut total = 0.0;
        let mut count = 0;
        for y in 0..=h - SSIM_WINDOW {
            for x in 0..=w - SSIM_WINDOW {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let k = (y + i) * w + x + j;
                        ma += g[i] * g[j] * a[k];
                        mb += g[i] * g[j] * b[k];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let k = (y + i) * w + x + j;
                        let wt = g[i] * g[j];
                        va += wt * (a[k] - ma) * (a[k] - ma);
                        vb += wt * (b[k] - mb) * (b[k] - mb);
                        cov += wt * (a[k] - ma) * (b[k] - mb);
                    }
                }
                total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn psnr_closed_forms() {
        let a = crate::synthetic::scene(16, 16, 1).cast::<f64>();
        assert_eq!(psnr_y(&a, &a, 2).unwrap(), PSNR_CAP);

        let got = psnr_y(&gray(12, 12, 100.0), &gray(12, 12, 101.0), 2).unwrap();
        assert!((got - 10.0 * 65025f64.log10()).abs() < 1e-6, "{got}");

        let got = psnr_y(&gray(12, 12, 100.0), &gray(12, 12, 116.0), 0).unwrap();
        assert!((got - 10.0 * (65025.0f64 / 256.0).log10()).abs() < 1e-6, "{got}");
        assert!((got - 24.05).abs() < 5e-3);
    }

    #[test]
    fn psnr_decreases_with_error_and_is_symmetric() {
        let base = gray(12, 12, 60.0);
        let mut last = f64::INFINITY;
        for gap in [0.5, 1.0, 2.0, 5.0, 20.0, 80.0] {
            let p = psnr_y(&base, &gray(12, 12, 60.0 + gap), 1).unwrap();
            assert!(p < last);
            last = p;
        }
        let a = crate::synthetic::scene(16, 16, 1);
        let b = crate::synthetic::scene(16, 16, 2);
        assert_eq!(psnr_y(&a, &b, 2).unwrap(), psnr_y(&b, &a, 2).unwrap());
    }

    #[test]
    fn psnr_rejects_bad_inputs() {
        let a = Tensor::<f32>::zeros([1, 3, 8, 8]);
        assert!(psnr_y(&a, &Tensor::zeros([1, 3, 8, 9]), 0).is_err());
        assert!(psnr_y(&a, &a, 4).is_err());
        assert!(psnr_y(&Tensor::<f32>::zeros([1, 1, 8, 8]), &Tensor::zeros([1, 1, 8, 8]), 0).is_err());
    }

    #[test]
    fn ssim_closed_forms() {
        let a = crate::synthetic::scene(24, 24, 5).cast::<f64>();
        assert_eq!(ssim_y(&a, &a).unwrap(), 1.0);

        let got = ssim_y(&gray(16, 16, 100.0), &gray(16, 16, 110.0)).unwrap();
        let want = (2.0 * 100.0 * 110.0 + SSIM_C1) / (100.0f64.powi(2) + 110.0f64.powi(2) + SSIM_C1);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        assert!(ssim_y(&gray(10, 16, 0.0), &gray(10, 16, 0.0)).is_err());
    }

    #[test]
    fn ssim_matches_brute_force_and_is_symmetric() {
        for seed in 0..3 {
            let a = crate::synthetic::scene(20, 17, seed).cast::<f64>();
            let b = crate::synthetic::scene(20, 17, seed + 10).cast::<f64>();
            let (ya, yb) = (luma(&a).unwrap(), luma(&b).unwrap());
            let fast = ssim_y(&a, &b).unwrap();
            assert!((fast - ssim_brute(&ya[0], &yb[0], 20, 17)).abs() < 1e-6);
            assert!((fast - ssim_y(&b, &a).unwrap()).abs() < 1e-9);
            assert!((-1.0..=1.0).contains(&fast));
        }
    }
}
