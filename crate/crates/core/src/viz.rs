//! Rendering of predicted per-pixel kernels: each kernel becomes a `k x k`
//! tile at its pixel, so a block producing an `H x W` image yields a
//! `kH x kW` panel. Upsampling blocks tile their `r x r` sub-kernels per
//! input pixel, which gives the same panel size at output resolution.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::degrade::DegradationMap;
use crate::dynconv::KernelLayout;
use crate::error::{Error, Result};
use crate::imageio::save_rgb8;
use crate::model::Udvd;
use crate::tensor::Tensor;

pub const SEPARATOR: u32 = 2;

/// Raw panel values and the rendered image.
#[derive(Clone, Debug)]
pub struct KernelViz {
    pub height: usize,
    pub width: usize,
    /// Kernels under map A, under map B, and their absolute difference.
    pub panels: [Vec<f64>; 3],
    pub image: RgbImage,
}

impl KernelViz {
    pub fn difference_mean(&self) -> f64 {
        self.panels[2].iter().sum::<f64>() / self.panels[2].len() as f64
    }

    /// 8-bit pixels of panel `i` as rendered.
    pub fn rendered_panel(&self, i: usize) -> Vec<u8> {
        let x0 = i as u32 * (self.width as u32 + SEPARATOR);
        let mut out = Vec::with_capacity(self.height * self.width);
        for y in 0..self.height as u32 {
            for x in 0..self.width as u32 {
                out.push(self.image.get_pixel(x0 + x, y)[0]);
            }
        }
        out
    }
}

/// Lays out item 0 of a kernel tensor as a tile mosaic.
pub fn kernel_panel(kernels: &Tensor<f32>, layout: KernelLayout) -> (usize, usize, Vec<f64>) {
    let (k, r) = (layout.k, layout.rate);
    let (h, w) = (kernels.h(), kernels.w());
    let (ph, pw) = (k * r * h, k * r * w);
    let mut panel = vec![0.0; ph * pw];
    for i in 0..h {
        for j in 0..w {
            for x in 0..r {
                for y in 0..r {
                    for a in 0..k {
                        for b in 0..k {
                            let ch = (x * r + y) * k * k + a * k + b;
                            let row = (i * r + x) * k + a;
                            let col = (j * r + y) * k + b;
                            panel[row * pw + col] = f64::from(kernels.at([0, ch, i, j]));
                        }
                    }
                }
            }
        }
    }
    (ph, pw, panel)
}

fn normalize(values: &[f64]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return vec![0; values.len()];
    }
    values.iter().map(|&v| ((v - lo) / (hi - lo) * 255.0).round() as u8).collect()
}

pub fn render_kernel_viz(
    model: &Udvd<f32>,
    lr: &Tensor<f32>,
    map_a: &DegradationMap,
    map_b: &DegradationMap,
    block: usize,
) -> Result<KernelViz> {
    let lr = lr.item_tensor(0);
    let (ka, layout) = model.predict_kernels(&lr, map_a.tensor(), block)?;
    let (kb, _) = model.predict_kernels(&lr, map_b.tensor(), block)?;
    let (h, w, a) = kernel_panel(&ka, layout);
    let (_, _, b) = kernel_panel(&kb, layout);
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).collect();
    let panels = [a, b, diff];

    let total_w = 3 * w as u32 + 2 * SEPARATOR;
    let mut image = RgbImage::from_pixel(total_w, h as u32, Rgb([255, 255, 255]));
    for (p, values) in panels.iter().enumerate() {
        let x0 = p as u32 * (w as u32 + SEPARATOR);
        for (i, v) in normalize(values).into_iter().enumerate() {
            image.put_pixel(x0 + (i % w) as u32, (i / w) as u32, Rgb([v, v, v]));
        }
    }
    Ok(KernelViz {
        height: h,
        width: w,
        panels,
        image,
    })
}

/// Renders the panels and writes them as one PNG.
pub fn export_kernel_viz(
    model: &Udvd<f32>,
    lr: &Tensor<f32>,
    map_a: &DegradationMap,
    map_b: &DegradationMap,
    block: usize,
    out_png: &Path,
) -> Result<KernelViz> {
    if map_a.tensor().shape() != map_b.tensor().shape() {
        return Err(Error::shape("the two degradation maps differ in size"));
    }
    let viz = render_kernel_viz(model, lr, map_a, map_b, block)?;
    save_rgb8(out_png, &viz.image)?;
    Ok(viz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{encode_degradation, gaussian_kernel, PcaBasis};
    use crate::model::{build_udvd, UdvdConfig};

    fn map(basis: &PcaBasis, eps: f64, sigma: f64, n: usize) -> DegradationMap {
        encode_degradation(&gaussian_kernel(eps, 15).unwrap(), sigma, basis, n, n).unwrap()
    }

    #[test]
    fn panel_layout() {
        let layout = KernelLayout::shared(3, 2);
        let t = Tensor::from_fn([1, 36, 2, 3], |[_, c, i, j]| (c * 100 + i * 10 + j) as f32);
        let (h, w, p) = kernel_panel(&t, layout);
        assert_eq!((h, w), (12, 18));
        // pixel (1, 2), sub-position (1, 0), tap (2, 1)
        let (row, col) = ((2 + 1) * 3 + 2, (2 * 2) * 3 + 1);
        assert_eq!(p[row * w + col], ((2 * 9 + 2 * 3 + 1) * 100 + 12) as f64);
    }

    #[test]
    fn identical_maps_give_a_zero_difference_and_sizes_add_up() {
        let model = build_udvd(&UdvdConfig::new(1, 8, "UD", 5, 2).unwrap(), 0).unwrap();
        let basis = PcaBasis::default_fit();
        let lr = crate::synthetic::scene(6, 6, 0);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("k.png");
        let m = map(&basis, 0.2, 0.0, 6);
        let viz = export_kernel_viz(&model, &lr, &m, &m, 1, &out).unwrap();
        assert_eq!((viz.height, viz.width), (60, 60));
        assert!(viz.panels[2].iter().all(|&v| v == 0.0));
        assert!(viz.rendered_panel(2).iter().all(|&v| v == 0));
        let img = image::open(&out).unwrap();
        assert_eq!((img.width(), img.height()), (3 * 60 + 4, 60));

        let other = map(&basis, 1.6, 10.0, 6);
        let viz = render_kernel_viz(&model, &lr, &m, &other, 0).unwrap();
        assert!(viz.difference_mean() > 0.0);
        assert!(render_kernel_viz(&model, &lr, &m, &other, 2).is_err());
    }
}
