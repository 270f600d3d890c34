//! The network: a residual trunk extracting features `F` from the LR image
//! and its degradation map, followed by a chain of dynamic blocks that each
//! predict per-pixel kernels, filter the running image with them (optionally
//! upsampling), and add a predicted residual.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::degrade::{bicubic_resize, DEFAULT_PCA_DIM};
use crate::dynconv::KernelLayout;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::CounterRng;
use crate::tensor::io::TenArray;
use crate::tensor::{Graph, ParamSet, Tensor, Var};

pub const IMAGE_CHANNELS: usize = 3;
pub const MAP_CHANNELS: usize = DEFAULT_PCA_DIM + 1;
/// Head convolution widths inside every dynamic block.
pub const HEAD_CHANNELS: [usize; 3] = [16, 16, 32];
pub const RESIDUAL_CHANNELS: usize = 16;
/// Kernel-prediction and residual-terminal weights start this much below
/// fan-in scaling and the kernel bias starts at the centre-tap delta, so
/// every block begins close to nearest-neighbour upsampling (or identity) of
/// its input.
pub const KERNEL_INIT_GAIN: f64 = 0.01;

fn delta_bias<E: Real>(bias: &mut [E], k: usize, rate: usize) {
    let taps = k * k;
    bias.fill(E::zero());
    for sub in 0..rate * rate {
        bias[sub * taps + (k / 2) * k + k / 2] = E::one();
    }
}

/// Architecture description. `block_seq` is a string over `U` (upsampling
/// dynamic block) and `D` (resolution-preserving dynamic block); an empty
/// sequence is the baseline trunk plus a sub-pixel output head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UdvdConfig {
    pub n_res_blocks: usize,
    pub trunk_channels: usize,
    pub block_seq: String,
    pub k: usize,
    pub scale: usize,
    /// Upsample rate of each block; derived from `block_seq` and `scale`.
    #[serde(default)]
    pub per_block_upsample: Vec<usize>,
    pub multistage: bool,
}

impl UdvdConfig {
    pub fn new(n_res_blocks: usize, trunk_channels: usize, block_seq: &str, k: usize, scale: usize) -> Result<Self> {
        let mut c = Self {
            n_res_blocks,
            trunk_channels,
            block_seq: block_seq.to_owned(),
            k,
            scale,
            per_block_upsample: Vec::new(),
            multistage: true,
        };
        c.per_block_upsample = c.derive_rates()?;
        Ok(c)
    }

    /// Full-size network: 15 residual blocks of 128 channels, `k = 5`,
    /// `UDD` for scales 2 and 3 and `UUDD` for scale 4.
    pub fn paper_default(scale: usize) -> Result<Self> {
        let seq = if scale == 4 { "UUDD" } else { "UDD" };
        Self::new(15, 128, seq, 5, scale)
    }

    /// Small configuration for fast experiments and CI.
    pub fn desk_default() -> Self {
        Self::new(3, 32, "UDD", 5, 2).expect("valid desk config")
    }

    pub fn with_multistage(mut self, on: bool) -> Self {
        self.multistage = on;
        self
    }

    fn derive_rates(&self) -> Result<Vec<usize>> {
        if let Some(bad) = self.block_seq.chars().find(|ch| !matches!(ch, 'U' | 'D')) {
            return Err(Error::Config(format!("block sequence may only contain U and D, found {bad:?}")));
        }
        if self.k.is_multiple_of(2) || self.k == 0 {
            return Err(Error::Config(format!("per-pixel kernel size must be odd, got {}", self.k)));
        }
        if self.scale == 0 || self.trunk_channels == 0 {
            return Err(Error::Config("scale and trunk width must be positive".into()));
        }
        let ups = self.block_seq.matches('U').count() as u32;
        let rate = if ups == 0 {
            if self.scale != 1 && !self.block_seq.is_empty() {
                return Err(Error::Config(format!(
                    "sequence {:?} has no U block but scale is {}",
                    self.block_seq, self.scale
                )));
            }
            1
        } else {
            let r = (self.scale as f64).powf(1.0 / ups as f64).round() as usize;
            if r < 2 || r.pow(ups) != self.scale {
                return Err(Error::Config(format!(
                    "scale {} cannot be split evenly over {ups} U blocks",
                    self.scale
                )));
            }
            r
        };
        Ok(self
            .block_seq
            .chars()
            .map(|ch| if ch == 'U' { rate } else { 1 })
            .collect())
    }

    /// Checks invariants and fills `per_block_upsample`.
    pub fn validated(mut self) -> Result<Self> {
        let rates = self.derive_rates()?;
        if !self.per_block_upsample.is_empty() && self.per_block_upsample != rates {
            return Err(Error::Config(format!(
                "per_block_upsample {:?} disagrees with derived {:?}",
                self.per_block_upsample, rates
            )));
        }
        self.per_block_upsample = rates;
        Ok(self)
    }

    pub fn is_baseline(&self) -> bool {
        self.block_seq.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    weight: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
struct DynBlock {
    rate: usize,
    /// Resolution of the block input relative to the LR image.
    level: usize,
    head: [Conv; 3],
    kernel: Conv,
    residual: [Conv; 2],
}

/// Graph handles produced by one dynamic block.
#[derive(Clone, Copy, Debug)]
pub struct BlockOutput {
    /// `I^m = O^m + R^m`.
    pub image: Var,
    /// `O^m`, the dynamically filtered input.
    pub filtered: Var,
    /// `R^m`.
    pub residual: Var,
    /// Predicted per-pixel kernels (`None` for the baseline head).
    pub kernels: Option<Var>,
    pub layout: Option<KernelLayout>,
}

/// Network parameters plus the wiring that interprets them.
#[derive(Clone, Debug)]
pub struct Udvd<E: Real = f32> {
    config: UdvdConfig,
    params: ParamSet<E>,
    input: Conv,
    res_blocks: Vec<(Conv, Conv)>,
    align: BTreeMap<usize, Conv>,
    blocks: Vec<DynBlock>,
    baseline: Option<Conv>,
}

struct Builder<'a> {
    params: &'a mut ParamSet<f64>,
    rng: CounterRng,
}

impl Builder<'_> {
    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) -> Result<Conv> {
        self.conv_with_gain(name, c_in, c_out, k, 1.0)
    }

    fn conv_with_gain(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, gain: f64) -> Result<Conv> {
        let fan_in = (c_in * k * k) as f64;
        let std = gain * (2.0 / fan_in).sqrt();
        let stream = self.rng.stream(self.params.len() as u64);
        let mut i = 0;
        let w = Tensor::from_fn([c_out, c_in, k, k], |_| {
            i += 1;
            std * stream.normal_at(i)
        });
        let weight = self.params.push(format!("{name}.weight"), w)?;
        let bias = self.params.push(format!("{name}.bias"), Tensor::zeros([1, c_out, 1, 1]))?;
        Ok(Conv { weight, bias })
    }
}

/// Builds the network with deterministic fan-in scaled normal weights and
/// zero biases.
pub fn build_udvd(config: &UdvdConfig, seed: u64) -> Result<Udvd<f32>> {
    Ok(build_udvd_f64(config, seed)?.cast())
}

fn build_udvd_f64(config: &UdvdConfig, seed: u64) -> Result<Udvd<f64>> {
    let config = config.clone().validated()?;
    let mut params = ParamSet::new();
    let mut b = Builder {
        params: &mut params,
        rng: CounterRng::new(seed).stream(0x1417),
    };
    let ch = config.trunk_channels;
    let input = b.conv("trunk.input", IMAGE_CHANNELS + MAP_CHANNELS, ch, 3)?;
    let mut res_blocks = Vec::with_capacity(config.n_res_blocks);
    for i in 0..config.n_res_blocks {
        let c1 = b.conv(&format!("trunk.block{i}.conv1"), ch, ch, 3)?;
        let c2 = b.conv(&format!("trunk.block{i}.conv2"), ch, ch, 3)?;
        res_blocks.push((c1, c2));
    }
    let mut align = BTreeMap::new();
    let mut blocks = Vec::new();
    let mut level = 1;
    for (m, &rate) in config.per_block_upsample.iter().enumerate() {
        if level > 1 && !align.contains_key(&level) {
            align.insert(level, b.conv(&format!("align.x{level}"), ch, ch * level * level, 3)?);
        }
        let p = format!("dyn{m}");
        let head = [
            b.conv(&format!("{p}.head1"), IMAGE_CHANNELS, HEAD_CHANNELS[0], 3)?,
            b.conv(&format!("{p}.head2"), HEAD_CHANNELS[0], HEAD_CHANNELS[1], 3)?,
            b.conv(&format!("{p}.head3"), HEAD_CHANNELS[1], HEAD_CHANNELS[2], 3)?,
        ];
        let joint = HEAD_CHANNELS[2] + ch;
        let kernel = b.conv_with_gain(&format!("{p}.kernel"), joint, config.k * config.k * rate * rate, 3, KERNEL_INIT_GAIN)?;
        delta_bias(b.params.get_mut(kernel.bias).value.data_mut(), config.k, rate);
        let residual = [
            b.conv(&format!("{p}.res1"), joint, RESIDUAL_CHANNELS, 3)?,
            b.conv_with_gain(&format!("{p}.res2"), RESIDUAL_CHANNELS, IMAGE_CHANNELS * rate * rate, 3, KERNEL_INIT_GAIN)?,
        ];
        blocks.push(DynBlock {
            rate,
            level,
            head,
            kernel,
            residual,
        });
        level *= rate;
    }
    let baseline = if config.is_baseline() {
        Some(b.conv("baseline.out", ch, IMAGE_CHANNELS * config.scale * config.scale, 3)?)
    } else {
        None
    };
    Ok(Udvd {
        config,
        params,
        input,
        res_blocks,
        align,
        blocks,
        baseline,
    })
}

impl<E: Real> Udvd<E> {
    pub fn config(&self) -> &UdvdConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<E> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<E> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Number of outputs `udvd_forward` produces (1 for the baseline).
    pub fn stages(&self) -> usize {
        self.blocks.len().max(1)
    }

    pub fn block_rates(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.rate).collect()
    }

    pub fn cast<F: Real>(&self) -> Udvd<F> {
        Udvd {
            config: self.config.clone(),
            params: self.params.cast(),
            input: self.input,
            res_blocks: self.res_blocks.clone(),
            align: self.align.clone(),
            blocks: self.blocks.clone(),
            baseline: self.baseline,
        }
    }

    fn conv(&self, g: &mut Graph<E>, vars: &[Var], x: Var, c: Conv) -> Result<Var> {
        g.conv2d(x, vars[c.weight], vars[c.bias], 1)
    }

    /// Records a forward pass. `vars` must come from `self.params().bind(g)`.
    pub fn forward(&self, g: &mut Graph<E>, vars: &[Var], lr: Var, map: Var) -> Result<Vec<BlockOutput>> {
        if vars.len() != self.params.len() {
            return Err(Error::Graph("parameter binding does not match the model".into()));
        }
        let (lr_t, map_t) = (g.value(lr)?, g.value(map)?);
        if lr_t.c() != IMAGE_CHANNELS || map_t.c() != MAP_CHANNELS {
            return Err(Error::shape(format!(
                "expected {IMAGE_CHANNELS}-channel image and {MAP_CHANNELS}-channel map, got {} and {}",
                lr_t.c(),
                map_t.c()
            )));
        }
        if lr_t.h() != map_t.h() || lr_t.w() != map_t.w() || lr_t.n() != map_t.n() {
            return Err(Error::shape(format!(
                "map {:?} does not match image {:?}",
                map_t.shape(),
                lr_t.shape()
            )));
        }
        let x = g.concat_channels(&[lr, map])?;
        let mut f = self.conv(g, vars, x, self.input)?;
        for &(c1, c2) in &self.res_blocks {
            let h = self.conv(g, vars, f, c1)?;
            let h = g.relu(h)?;
            let h = self.conv(g, vars, h, c2)?;
            f = g.add(f, h)?;
        }

        if let Some(head) = self.baseline {
            let y = self.conv(g, vars, f, head)?;
            let y = g.pixel_shuffle(y, self.config.scale)?;
            return Ok(vec![BlockOutput {
                image: y,
                filtered: y,
                residual: y,
                kernels: None,
                layout: None,
            }]);
        }

        let mut aligned: BTreeMap<usize, Var> = BTreeMap::new();
        aligned.insert(1, f);
        let mut image = lr;
        let mut outputs = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let features = match aligned.get(&blk.level) {
                Some(&v) => v,
                None => {
                    let e = self.conv(g, vars, f, self.align[&blk.level])?;
                    let v = g.pixel_shuffle(e, blk.level)?;
                    aligned.insert(blk.level, v);
                    v
                }
            };
            let mut h = self.conv(g, vars, image, blk.head[0])?;
            h = g.relu(h)?;
            h = self.conv(g, vars, h, blk.head[1])?;
            h = g.relu(h)?;
            h = self.conv(g, vars, h, blk.head[2])?;
            let joint = g.concat_channels(&[h, features])?;

            let kernels = self.conv(g, vars, joint, blk.kernel)?;
            let layout = KernelLayout::shared(self.config.k, blk.rate);
            let filtered = g.dynamic_conv(image, kernels, layout)?;

            let r = self.conv(g, vars, joint, blk.residual[0])?;
            let r = g.relu(r)?;
            let mut r = self.conv(g, vars, r, blk.residual[1])?;
            if blk.rate > 1 {
                r = g.pixel_shuffle(r, blk.rate)?;
            }
            image = g.add(filtered, r)?;
            outputs.push(BlockOutput {
                image,
                filtered,
                residual: r,
                kernels: Some(kernels),
                layout: Some(layout),
            });
        }
        Ok(outputs)
    }

    /// Runs the network on plain tensors and returns every block's output
    /// image `I^1..I^M`.
    pub fn predict(&self, lr: &Tensor<E>, map: &Tensor<E>) -> Result<Vec<Tensor<E>>> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g);
        let (lr, map) = (g.constant(lr.clone()), g.constant(map.clone()));
        let outs = self.forward(&mut g, &vars, lr, map)?;
        outs.iter().map(|o| g.value(o.image).cloned()).collect()
    }

    /// Per-pixel kernels predicted by dynamic block `index`.
    pub fn predict_kernels(&self, lr: &Tensor<E>, map: &Tensor<E>, index: usize) -> Result<(Tensor<E>, KernelLayout)> {
        if index >= self.blocks.len() {
            return Err(Error::param(format!(
                "block index {index} out of range for {} dynamic blocks",
                self.blocks.len()
            )));
        }
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g);
        let (lr, map) = (g.constant(lr.clone()), g.constant(map.clone()));
        let outs = self.forward(&mut g, &vars, lr, map)?;
        let out = &outs[index];
        let kernels = out.kernels.expect("dynamic blocks always predict kernels");
        Ok((g.value(kernels)?.clone(), out.layout.expect("layout accompanies kernels")))
    }

    /// Names and values of every parameter, for checkpoints.
    pub fn to_entries(&self) -> Vec<(String, TenArray)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), TenArray::from_tensor(&p.value.cast())))
            .collect()
    }

    pub fn load_entries(&mut self, entries: &[(String, TenArray)]) -> Result<()> {
        let tensors = entries
            .iter()
            .filter(|(n, _)| self.params.by_name(n).is_some())
            .map(|(n, a)| Ok((n.clone(), a.to_tensor()?.cast())))
            .collect::<Result<Vec<_>>>()?;
        self.params.load_values(&tensors)
    }

    /// Forces every dynamic block to delta kernels and a zero residual, which
    /// makes each `D` block an exact identity.
    pub fn force_identity_blocks(&mut self) {
        for blk in self.blocks.clone() {
            for c in [blk.kernel, blk.residual[0], blk.residual[1]] {
                self.params.get_mut(c.weight).value.data_mut().fill(E::zero());
                self.params.get_mut(c.bias).value.data_mut().fill(E::zero());
            }
            delta_bias(self.params.get_mut(blk.kernel.bias).value.data_mut(), self.config.k, blk.rate);
        }
    }

    /// Zeroes both residual-path convolutions of every dynamic block.
    pub fn zero_residual_paths(&mut self) {
        for blk in self.blocks.clone() {
            for c in blk.residual {
                self.params.get_mut(c.weight).value.data_mut().fill(E::zero());
                self.params.get_mut(c.bias).value.data_mut().fill(E::zero());
            }
        }
    }
}

/// Target for a stage: `hr` itself, or `hr` bicubically resized to the stage
/// resolution.
pub fn stage_target<E: Real>(hr: &Tensor<E>, h: usize, w: usize) -> Result<Tensor<E>> {
    if hr.h() == h && hr.w() == w {
        Ok(hr.clone())
    } else {
        bicubic_resize(hr, h, w, true)
    }
}

/// Sum of per-stage L2 losses against `hr` (only the final stage when
/// `multistage` is off), recorded in the graph.
pub fn multistage_loss<E: Real>(g: &mut Graph<E>, outputs: &[Var], hr: &Tensor<E>, multistage: bool) -> Result<Var> {
    let last = *outputs
        .last()
        .ok_or_else(|| Error::param("multistage loss needs at least one output"))?;
    let used: &[Var] = if multistage { outputs } else { std::slice::from_ref(&last) };
    let mut total: Option<Var> = None;
    for &o in used {
        let v = g.value(o)?;
        let target = stage_target(hr, v.h(), v.w())?;
        let t = g.constant(target);
        let l = g.l2_loss(o, t)?;
        total = Some(match total {
            None => l,
            Some(acc) => g.add(acc, l)?,
        });
    }
    Ok(total.expect("at least one stage"))
}
