//! 8-bit RGB PNG import and export. Tensors hold values in `[0, 1]`; export
//! clips and rounds.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Loads a PNG as a `(1, 3, H, W)` tensor. Gray and alpha images are
/// converted to RGB.
pub fn load_png(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })?
        .to_rgb8();
    Ok(from_rgb8(&img))
}

pub fn from_rgb8(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros([1, 3, h, w]);
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            t.set([0, c, y as usize, x as usize], f32::from(px[c]) / 255.0);
        }
    }
    t
}

fn quantize<E: Real>(v: E) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Converts batch item `n` of a 3-channel tensor to an RGB image.
pub fn to_rgb8<E: Real>(t: &Tensor<E>, n: usize) -> Result<RgbImage> {
    let [batch, c, h, w] = t.shape();
    if c != 3 || n >= batch {
        return Err(Error::shape(format!("cannot export item {n} of {:?} as RGB", t.shape())));
    }
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let px = |ch| quantize(t.at([n, ch, y as usize, x as usize]));
        Rgb([px(0), px(1), px(2)])
    }))
}

/// Writes item 0 of a `(N, 3, H, W)` tensor.
pub fn save_png<E: Real>(path: impl AsRef<Path>, t: &Tensor<E>) -> Result<()> {
    save_rgb8(path, &to_rgb8(t, 0)?)
}

pub fn save_rgb8(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })
}

/// Rounds a tensor to the 8-bit grid, as a save/load cycle would.
pub fn quantize_tensor<E: Real>(t: &Tensor<E>) -> Tensor<E> {
    t.map(|v| E::from_f64(f64::from(quantize(v)) / 255.0))
}
