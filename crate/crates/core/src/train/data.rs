//! Training data: directory listing, aligned patch sampling, degradation
//! synthesis and batch sources.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::Augment;
use crate::degrade::{degrade, encode_degradation, DegradationParams, PcaBasis};
use crate::error::{Error, Result};
use crate::imageio::load_png;
use crate::rng::CounterRng;
use crate::tensor::Tensor;

/// PNG files of `dir`, sorted by file name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && p.is_file() {
            paths.push(p);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<Tensor<f32>>> {
    let dir = dir.as_ref();
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(Error::Config(format!("no PNG images in {}", dir.display())));
    }
    paths.iter().map(load_png).collect()
}

/// Where a patch came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchSpec {
    /// HR offsets; both are multiples of the scale.
    pub top: usize,
    pub left: usize,
    pub size_hr: usize,
    pub augment: Augment,
}

/// Draws an aligned `patch_lr * s` square crop and one of the eight
/// augmentations. Returns `None` when the image is too small.
pub fn sample_patch(hr: &Tensor<f32>, s: usize, patch_lr: usize, seed: u64) -> Option<(Tensor<f32>, PatchSpec)> {
    let size = patch_lr * s;
    if hr.h() < size || hr.w() < size {
        return None;
    }
    let rng = CounterRng::new(seed);
    let top = s * rng.below_at(0, ((hr.h() - size) / s + 1) as u64) as usize;
    let left = s * rng.below_at(1, ((hr.w() - size) / s + 1) as u64) as usize;
    let augment = Augment::from_index(rng.below_at(2, 8) as u8).expect("index below 8");
    let patch = augment.apply(&hr.crop(top, left, size, size).ok()?);
    Some((
        patch,
        PatchSpec {
            top,
            left,
            size_hr: size,
            augment,
        },
    ))
}

/// One training example.
#[derive(Clone, Debug)]
pub struct Sample {
    pub hr: Tensor<f32>,
    pub lr: Tensor<f32>,
    pub map: Tensor<f32>,
    pub params: DegradationParams,
    pub seed: u64,
}

impl Sample {
    pub fn synthesize(hr: Tensor<f32>, params: DegradationParams, basis: &PcaBasis, seed: u64) -> Result<Self> {
        let lr = degrade(&hr, &params, seed)?;
        let map = encode_degradation(&params.kernel(), params.noise_level(), basis, lr.h(), lr.w())?.into_tensor();
        Ok(Self {
            hr,
            lr,
            map,
            params,
            seed,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub hr: Tensor<f32>,
    pub lr: Tensor<f32>,
    pub map: Tensor<f32>,
    pub seeds: Vec<u64>,
}

impl Batch {
    pub fn from_samples(samples: &[&Sample]) -> Result<Self> {
        let stack = |f: fn(&Sample) -> &Tensor<f32>| {
            let items: Vec<Tensor<f32>> = samples.iter().map(|s| f(s).clone()).collect();
            Tensor::stack(&items)
        };
        Ok(Self {
            hr: stack(|s| &s.hr)?,
            lr: stack(|s| &s.lr)?,
            map: stack(|s| &s.map)?,
            seeds: samples.iter().map(|s| s.seed).collect(),
        })
    }
}

/// Produces the batch for a 1-indexed training step. Must be a pure
/// function of the step so runs are reproducible and resumable.
pub trait BatchSource: Sync {
    fn batch(&self, step: u64) -> Result<Batch>;
}

/// Random aligned patches with degradation parameters drawn uniformly per
/// item.
pub struct RandomPatches {
    images: Vec<Tensor<f32>>,
    basis: PcaBasis,
    scale: usize,
    patch_lr: usize,
    batch: usize,
    eps_range: (f64, f64),
    sigma_range: (f64, f64),
    seed: u64,
}

impl RandomPatches {
    pub fn new(images: Vec<Tensor<f32>>, basis: PcaBasis, cfg: &super::TrainConfig) -> Result<Self> {
        let size = cfg.patch_hr();
        let usable: Vec<_> = images.into_iter().filter(|t| t.h() >= size && t.w() >= size).collect();
        if usable.is_empty() {
            return Err(Error::Config(format!("no training image is at least {size}x{size}")));
        }
        DegradationParams::new(cfg.eps_range.0, cfg.sigma_range.0, cfg.model.scale)?;
        DegradationParams::new(cfg.eps_range.1, cfg.sigma_range.1, cfg.model.scale)?;
        Ok(Self {
            images: usable,
            basis,
            scale: cfg.model.scale,
            patch_lr: cfg.patch_lr,
            batch: cfg.batch,
            eps_range: cfg.eps_range,
            sigma_range: cfg.sigma_range,
            seed: cfg.seed,
        })
    }

    pub fn item_seed(&self, step: u64, item: usize) -> u64 {
        CounterRng::new(self.seed).stream(step).u64_at(item as u64)
    }

    pub fn sample(&self, seed: u64) -> Result<Sample> {
        let rng = CounterRng::new(seed);
        let img = &self.images[rng.below_at(0, self.images.len() as u64) as usize];
        let (hr, _) = sample_patch(img, self.scale, self.patch_lr, rng.u64_at(1)).expect("images are pre-filtered by size");
        let eps = rng.uniform_range_at(2, self.eps_range.0, self.eps_range.1);
        let sigma = rng.uniform_range_at(3, self.sigma_range.0, self.sigma_range.1);
        let params = DegradationParams::new(eps, sigma, self.scale)?;
        Sample::synthesize(hr, params, &self.basis, rng.u64_at(4))
    }
}

impl BatchSource for RandomPatches {
    fn batch(&self, step: u64) -> Result<Batch> {
        let samples = (0..self.batch)
            .into_par_iter()
            .map(|i| self.sample(self.item_seed(step, i)))
            .collect::<Result<Vec<_>>>()?;
        Batch::from_samples(&samples.iter().collect::<Vec<_>>())
    }
}

/// A fixed set of examples cycled in order.
pub struct PatchBank {
    samples: Vec<Sample>,
    batch: usize,
}

impl PatchBank {
    pub fn new(samples: Vec<Sample>, batch: usize) -> Result<Self> {
        if samples.is_empty() || batch == 0 {
            return Err(Error::param("patch bank needs samples and a positive batch size"));
        }
        Ok(Self { samples, batch })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// All samples as one batch.
    pub fn full_batch(&self) -> Result<Batch> {
        Batch::from_samples(&self.samples.iter().collect::<Vec<_>>())
    }
}

impl BatchSource for PatchBank {
    fn batch(&self, step: u64) -> Result<Batch> {
        let n = self.samples.len();
        let start = ((step.saturating_sub(1)) as usize * self.batch) % n;
        let picked: Vec<&Sample> = (0..self.batch.min(n)).map(|j| &self.samples[(start + j) % n]).collect();
        Batch::from_samples(&picked)
    }
}
