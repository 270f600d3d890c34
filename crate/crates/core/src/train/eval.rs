use std::path::Path;

use serde::{Deserialize, Serialize};

use super::list_images;
use crate::error::{Error, Result};
use crate::imageio::load_png;
use crate::metrics::{psnr_y, ssim_y};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: Vec<ImageScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub scale: usize,
    pub border: usize,
}

/// Scores prediction/ground-truth pairs. Ground truth larger than the
/// prediction by less than `scale` in either dimension (a size that was not
/// divisible by the scale) is cropped from the top-left corner; both images
/// then lose `border` pixels per side for PSNR and SSIM alike.
pub fn evaluate_pairs(pairs: &[(String, Tensor<f32>, Tensor<f32>)], scale: usize, border: usize) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let mut images = Vec::with_capacity(pairs.len());
    for (name, pred, gt) in pairs {
        let (h, w) = (pred.h(), pred.w());
        let fits = gt.h() >= h && gt.w() >= w && gt.h() - h < scale.max(1) && gt.w() - w < scale.max(1);
        if !fits {
            return Err(Error::shape(format!(
                "{name}: prediction {h}x{w} does not match ground truth {}x{}",
                gt.h(),
                gt.w()
            )));
        }
        let gt = gt.crop(0, 0, h, w)?;
        let psnr = psnr_y(pred, &gt, border)?;
        let inner = |t: &Tensor<f32>| t.crop(border, border, h - 2 * border, w - 2 * border);
        let ssim = ssim_y(&inner(pred)?, &inner(&gt)?)?;
        images.push(ImageScore {
            name: name.clone(),
            psnr,
            ssim,
        });
    }
    let n = images.len() as f64;
    Ok(EvalReport {
        mean_psnr: images.iter().map(|s| s.psnr).sum::<f64>() / n,
        mean_ssim: images.iter().map(|s| s.ssim).sum::<f64>() / n,
        images,
        scale,
        border,
    })
}

/// Pairs PNGs of two directories by file name and scores them.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, scale: usize, border: usize) -> Result<EvalReport> {
    let mut pairs = Vec::new();
    for pred_path in list_images(pred_dir)? {
        let name = pred_path.file_name().expect("listed files have names").to_owned();
        let gt_path = gt_dir.join(&name);
        if !gt_path.is_file() {
            return Err(Error::Config(format!("no ground truth for {}", name.to_string_lossy())));
        }
        pairs.push((name.to_string_lossy().into_owned(), load_png(&pred_path)?, load_png(&gt_path)?));
    }
    evaluate_pairs(&pairs, scale, border)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_means_and_cropping() {
        let gt = crate::synthetic::scene(31, 30, 1);
        let pred = gt.crop(0, 0, 30, 30).unwrap();
        let other = crate::synthetic::scene(30, 30, 2);
        let r = evaluate_pairs(&[("a".into(), pred, gt.clone()), ("b".into(), other, gt.clone())], 2, 2).unwrap();
        assert_eq!(r.images[0].psnr, 99.0);
        assert_eq!(r.images[0].ssim, 1.0);
        assert!(r.images[1].psnr < 99.0);
        assert!((r.mean_psnr - (r.images[0].psnr + r.images[1].psnr) / 2.0).abs() < 1e-12);
        let too_small = crate::synthetic::scene(20, 20, 2);
        assert!(evaluate_pairs(&[("c".into(), too_small, gt)], 2, 2).is_err());
    }
}
