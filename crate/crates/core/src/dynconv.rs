//! Per-pixel dynamic convolution, with and without integrated upsampling.
//!
//! For kernel size `k` (odd, `Δ = k / 2`) and rate `r`, every input pixel
//! `(i, j)` owns `r²` kernels of `k x k` taps and produces the `r x r` output
//! block
//!
//! ```text
//! out(i·r + x, j·r + y) = Σ_{u,v ∈ [-Δ, Δ]} K[i, j, x, y](u, v) · in(i - u, j - v)
//! ```
//!
//! with zero padding outside the image. Kernel channel layout, frozen for
//! checkpoint compatibility:
//!
//! * shared, any `r`: `(x·r + y)·k² + (u + Δ)·k + (v + Δ)`
//! * per-channel (`r = 1` only): `c·k² + (u + Δ)·k + (v + Δ)`
//!
//! Predicted kernel values are used as-is; nothing normalizes them.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelSharing {
    /// One kernel per pixel applied to every image channel.
    Shared,
    /// An independent kernel per pixel and channel.
    PerChannel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct KernelLayout {
    pub k: usize,
    pub rate: usize,
    pub sharing: ChannelSharing,
}

impl KernelLayout {
    pub fn shared(k: usize, rate: usize) -> Self {
        Self {
            k,
            rate,
            sharing: ChannelSharing::Shared,
        }
    }

    pub fn per_channel(k: usize) -> Self {
        Self {
            k,
            rate: 1,
            sharing: ChannelSharing::PerChannel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k.is_multiple_of(2) {
            return Err(Error::param(format!("per-pixel kernel size must be odd, got {}", self.k)));
        }
        if self.rate == 0 {
            return Err(Error::param("upsample rate must be at least 1"));
        }
        if self.sharing == ChannelSharing::PerChannel && self.rate != 1 {
            return Err(Error::param("upsampling dynamic convolution is always channel-shared"));
        }
        Ok(())
    }

    #[inline]
    pub fn half(&self) -> usize {
        self.k / 2
    }

    #[inline]
    pub fn taps(&self) -> usize {
        self.k * self.k
    }

    /// Kernel channels needed for an image with `image_channels` channels.
    pub fn channels(&self, image_channels: usize) -> usize {
        match self.sharing {
            ChannelSharing::Shared => self.taps() * self.rate * self.rate,
            ChannelSharing::PerChannel => self.taps() * image_channels,
        }
    }

    /// Kernel channel that drives output sub-position `sub = x·r + y` of image
    /// channel `c`.
    #[inline]
    fn base_channel(&self, c: usize, sub: usize) -> usize {
        match self.sharing {
            ChannelSharing::Shared => sub * self.taps(),
            ChannelSharing::PerChannel => c * self.taps(),
        }
    }

    /// Kernel channel for an offset `(u, v)` in `[-Δ, Δ]²` and sub-position.
    pub fn channel_of(&self, c: usize, x: usize, y: usize, u: isize, v: isize) -> usize {
        let d = self.half() as isize;
        self.base_channel(c, x * self.rate + y) + ((u + d) as usize) * self.k + (v + d) as usize
    }
}

/// Predicted kernel tensor `(n, k²·r², h, w)` (or `(n, c·k², h, w)` per-channel).
#[derive(Clone, Debug, PartialEq)]
pub struct PerPixelKernels<E: Real = f32> {
    tensor: Tensor<E>,
    layout: KernelLayout,
}

impl<E: Real> PerPixelKernels<E> {
    pub fn new(tensor: Tensor<E>, layout: KernelLayout) -> Result<Self> {
        layout.validate()?;
        if layout.sharing == ChannelSharing::Shared && tensor.c() != layout.channels(0) {
            return Err(Error::shape(format!(
                "kernel tensor has {} channels, layout k={} r={} needs {}",
                tensor.c(),
                layout.k,
                layout.rate,
                layout.channels(0)
            )));
        }
        if layout.sharing == ChannelSharing::PerChannel && !tensor.c().is_multiple_of(layout.taps()) {
            return Err(Error::shape(format!(
                "per-channel kernel tensor has {} channels, not a multiple of {}",
                tensor.c(),
                layout.taps()
            )));
        }
        Ok(Self { tensor, layout })
    }

    /// Delta kernels (centre tap 1) for every pixel and sub-position.
    pub fn identity(n: usize, h: usize, w: usize, layout: KernelLayout, image_channels: usize) -> Result<Self> {
        layout.validate()?;
        let mut t = Tensor::zeros([n, layout.channels(image_channels), h, w]);
        let groups = match layout.sharing {
            ChannelSharing::Shared => layout.rate * layout.rate,
            ChannelSharing::PerChannel => image_channels,
        };
        let centre = layout.half() * layout.k + layout.half();
        for b in 0..n {
            for g in 0..groups {
                for i in 0..h {
                    for j in 0..w {
                        t.set([b, g * layout.taps() + centre, i, j], E::one());
                    }
                }
            }
        }
        Self::new(t, layout)
    }

    pub fn tensor(&self) -> &Tensor<E> {
        &self.tensor
    }

    pub fn layout(&self) -> KernelLayout {
        self.layout
    }

    pub fn into_tensor(self) -> Tensor<E> {
        self.tensor
    }
}

fn check<E: Real>(input: &Tensor<E>, kernels: &PerPixelKernels<E>) -> Result<()> {
    let kt = kernels.tensor();
    if kt.n() != input.n() || kt.h() != input.h() || kt.w() != input.w() {
        return Err(Error::shape(format!(
            "kernels {:?} do not cover input {:?}",
            kt.shape(),
            input.shape()
        )));
    }
    if kt.c() != kernels.layout.channels(input.c()) {
        return Err(Error::shape(format!(
            "kernel tensor has {} channels, input with {} channels needs {}",
            kt.c(),
            input.c(),
            kernels.layout.channels(input.c())
        )));
    }
    Ok(())
}

fn output_shape<E: Real>(input: &Tensor<E>, layout: KernelLayout) -> [usize; 4] {
    let [n, c, h, w] = input.shape();
    [n, c, h * layout.rate, w * layout.rate]
}

/// Literal nested-loop evaluation; the correctness oracle for the fast paths.
pub fn dynamic_conv_reference<E: Real>(input: &Tensor<E>, kernels: &PerPixelKernels<E>) -> Result<Tensor<E>> {
    check(input, kernels)?;
    let layout = kernels.layout;
    let [n, c, h, w] = input.shape();
    let (r, d) = (layout.rate, layout.half() as isize);
    let kt = kernels.tensor();
    let mut out = Tensor::zeros(output_shape(input, layout));
    for b in 0..n {
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    for x in 0..r {
                        for y in 0..r {
                            let mut acc = E::zero();
                            for u in -d..=d {
                                for v in -d..=d {
                                    let (iy, ix) = (i as isize - u, j as isize - v);
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let kc = layout.channel_of(ch, x, y, u, v);
                                    acc += kt.at([b, kc, i, j]) * input.at([b, ch, iy as usize, ix as usize]);
                                }
                            }
                            out.set([b, ch, i * r + x, j * r + y], acc);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Columns `j` for which `j - v` stays inside `0..w`.
#[inline]
fn col_range(w: usize, v: isize) -> (usize, usize) {
    let lo = v.max(0) as usize;
    let hi = (w as isize + v.min(0)).max(0) as usize;
    (lo.min(hi), hi)
}

/// `acc(i, j) += K_t(i, j) · src(i - u, j - v)` for every tap of one kernel
/// group, reading whole rows so the inner loop is branch-free.
fn accumulate_taps<E: Real>(acc: &mut [E], src: &[E], kernel_group: &[&[E]], layout: KernelLayout, h: usize, w: usize) {
    let d = layout.half() as isize;
    for u in -d..=d {
        for v in -d..=d {
            let kp = kernel_group[((u + d) as usize) * layout.k + (v + d) as usize];
            let (lo, hi) = col_range(w, v);
            if lo >= hi {
                continue;
            }
            for i in 0..h {
                let iy = i as isize - u;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                let s0 = iy as usize * w;
                let row = i * w;
                let a = &mut acc[row + lo..row + hi];
                let kk = &kp[row + lo..row + hi];
                let ss = &src[(s0 as isize + lo as isize - v) as usize..(s0 as isize + hi as isize - v) as usize];
                for ((o, &kv), &sv) in a.iter_mut().zip(kk).zip(ss) {
                    *o += kv * sv;
                }
            }
        }
    }
}

fn forward_fast<E: Real>(input: &Tensor<E>, kernels: &PerPixelKernels<E>) -> Result<Tensor<E>> {
    check(input, kernels)?;
    let layout = kernels.layout;
    let [_, c, h, w] = input.shape();
    let r = layout.rate;
    let kt = kernels.tensor();
    let mut out = Tensor::zeros(output_shape(input, layout));
    let (oh, ow) = (h * r, w * r);
    out.data_mut()
        .par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(plane_idx, dst)| {
            let (b, ch) = (plane_idx / c, plane_idx % c);
            let src = input.plane(b, ch);
            let mut acc = if r == 1 { Vec::new() } else { vec![E::zero(); h * w] };
            for x in 0..r {
                for y in 0..r {
                    let base = layout.base_channel(ch, x * r + y);
                    let group: Vec<&[E]> = (0..layout.taps()).map(|t| kt.plane(b, base + t)).collect();
                    if r == 1 {
                        accumulate_taps(dst, src, &group, layout, h, w);
                        continue;
                    }
                    acc.fill(E::zero());
                    accumulate_taps(&mut acc, src, &group, layout, h, w);
                    for i in 0..h {
                        let orow = (i * r + x) * ow + y;
                        for j in 0..w {
                            dst[orow + j * r] = acc[i * w + j];
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Typical dynamic convolution: output keeps the input resolution.
pub fn dynamic_conv<E: Real>(input: &Tensor<E>, kernels: &PerPixelKernels<E>) -> Result<Tensor<E>> {
    if kernels.layout.rate != 1 {
        return Err(Error::param(format!(
            "dynamic_conv needs rate-1 kernels, got rate {}",
            kernels.layout.rate
        )));
    }
    forward_fast(input, kernels)
}

/// Dynamic convolution producing an `r x r` output block per input pixel.
pub fn dynamic_conv_upsample<E: Real>(input: &Tensor<E>, kernels: &PerPixelKernels<E>) -> Result<Tensor<E>> {
    if kernels.layout.sharing != ChannelSharing::Shared {
        return Err(Error::param("upsampling dynamic convolution is always channel-shared"));
    }
    forward_fast(input, kernels)
}

/// Gradients of either forward form with respect to the input image and the
/// kernel tensor.
pub fn dynamic_conv_backward<E: Real>(
    upstream: &Tensor<E>,
    input: &Tensor<E>,
    kernels: &PerPixelKernels<E>,
) -> Result<(Tensor<E>, Tensor<E>)> {
    check(input, kernels)?;
    let layout = kernels.layout;
    if upstream.shape() != output_shape(input, layout) {
        return Err(Error::shape(format!(
            "dynamic conv backward: upstream {:?}, expected {:?}",
            upstream.shape(),
            output_shape(input, layout)
        )));
    }
    let [n, c, h, w] = input.shape();
    let (r, d) = (layout.rate, layout.half() as isize);
    let kt = kernels.tensor();
    let kc = kt.c();
    let ow = w * r;
    let hw = h * w;
    let partials: Vec<(Vec<E>, Vec<E>)> = (0..n)
        .into_par_iter()
        .map(|b| {
            let mut gx = vec![E::zero(); c * hw];
            let mut gk = vec![E::zero(); kc * hw];
            let mut up_sub = vec![E::zero(); hw];
            for ch in 0..c {
                let src = input.plane(b, ch);
                let up = upstream.plane(b, ch);
                let gxp = &mut gx[ch * hw..(ch + 1) * hw];
                for x in 0..r {
                    for y in 0..r {
                        for i in 0..h {
                            for j in 0..w {
                                up_sub[i * w + j] = up[(i * r + x) * ow + j * r + y];
                            }
                        }
                        let base = layout.base_channel(ch, x * r + y);
                        for u in -d..=d {
                            for v in -d..=d {
                                let t = base + ((u + d) as usize) * layout.k + (v + d) as usize;
                                let kp = kt.plane(b, t);
                                let gkp = &mut gk[t * hw..(t + 1) * hw];
                                let (lo, hi) = col_range(w, v);
                                if lo >= hi {
                                    continue;
                                }
                                for i in 0..h {
                                    let iy = i as isize - u;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let row = i * w;
                                    let s0 = (iy as usize * w) as isize - v;
                                    let srow = &src[(s0 + lo as isize) as usize..(s0 + hi as isize) as usize];
                                    let urow = &up_sub[row + lo..row + hi];
                                    for ((g, &uv), &sv) in gkp[row + lo..row + hi].iter_mut().zip(urow).zip(srow) {
                                        *g += uv * sv;
                                    }
                                    let krow = &kp[row + lo..row + hi];
                                    let gxrow = &mut gxp[(s0 + lo as isize) as usize..(s0 + hi as isize) as usize];
                                    for ((g, &uv), &kv) in gxrow.iter_mut().zip(urow).zip(krow) {
                                        *g += uv * kv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            (gx, gk)
        })
        .collect();
    let mut grad_x = Vec::with_capacity(input.len());
    let mut grad_k = Vec::with_capacity(kt.len());
    for (gx, gk) in partials {
        grad_x.extend_from_slice(&gx);
        grad_k.extend_from_slice(&gk);
    }
    Ok((Tensor::from_vec(input.shape(), grad_x)?, Tensor::from_vec(kt.shape(), grad_k)?))
}
