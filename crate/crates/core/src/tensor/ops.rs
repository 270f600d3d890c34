//! Forward and backward kernels for the standard (non-dynamic) operations.
//!
//! These work on plain tensors; [`super::Graph`] records them and wires the
//! backward functions together.

use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};
use crate::real::{matmul, Real};

/// Output spatial size of a stride-1 convolution, or a shape error.
fn conv_out_dims(h: usize, w: usize, kh: usize, kw: usize, pad: usize) -> Result<(usize, usize)> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    if kh == 0 || kw == 0 || ph < kh || pw < kw {
        return Err(Error::shape(format!(
            "conv2d: {kh}x{kw} kernel with pad {pad} on {h}x{w} input leaves no output"
        )));
    }
    Ok((ph - kh + 1, pw - kw + 1))
}

fn check_conv_args<E: Real>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    pad: usize,
) -> Result<(usize, usize)> {
    let [c_out, c_in, kh, kw] = weight.shape();
    if x.c() != c_in {
        return Err(Error::shape(format!(
            "conv2d: input has {} channels, weight expects {c_in}",
            x.c()
        )));
    }
    if bias.len() != c_out {
        return Err(Error::shape(format!(
            "conv2d: bias has {} entries for {c_out} output channels",
            bias.len()
        )));
    }
    conv_out_dims(x.h(), x.w(), kh, kw, pad)
}

struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Valid output-column range for kernel column offset `b`.
    #[inline]
    fn ox_range(&self, b: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(b);
        let hi = (self.w + self.pad).saturating_sub(b).min(self.ow);
        (lo, hi.max(lo))
    }

    fn im2col<E: Real>(&self, x: &[E], col: &mut [E]) {
        let (h, w, p) = (self.h as isize, self.w, self.pad as isize);
        let cols = self.cols();
        for ci in 0..self.c_in {
            let plane = &x[ci * self.h * w..(ci + 1) * self.h * w];
            for a in 0..self.kh {
                for b in 0..self.kw {
                    let row = (ci * self.kh + a) * self.kw + b;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    let (lo, hi) = self.ox_range(b);
                    for oy in 0..self.oh {
                        let iy = oy as isize + a as isize - p;
                        let out = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= h || lo >= hi {
                            out.fill(E::zero());
                            continue;
                        }
                        out[..lo].fill(E::zero());
                        out[hi..].fill(E::zero());
                        let src = iy as usize * w + lo + b - self.pad;
                        out[lo..hi].copy_from_slice(&plane[src..src + (hi - lo)]);
                    }
                }
            }
        }
    }

    fn col2im<E: Real>(&self, col: &[E], gx: &mut [E]) {
        let (h, w, p) = (self.h as isize, self.w, self.pad as isize);
        let cols = self.cols();
        for ci in 0..self.c_in {
            let plane = &mut gx[ci * self.h * w..(ci + 1) * self.h * w];
            for a in 0..self.kh {
                for b in 0..self.kw {
                    let row = (ci * self.kh + a) * self.kw + b;
                    let src = &col[row * cols..(row + 1) * cols];
                    let (lo, hi) = self.ox_range(b);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..self.oh {
                        let iy = oy as isize + a as isize - p;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let dst = iy as usize * w + lo + b - self.pad;
                        let from = &src[oy * self.ow + lo..oy * self.ow + hi];
                        for (d, &s) in plane[dst..dst + (hi - lo)].iter_mut().zip(from) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

fn geom<E: Real>(x: &Tensor<E>, weight: &Tensor<E>, pad: usize, oh: usize, ow: usize) -> ConvGeom {
    let [_, c_in, kh, kw] = weight.shape();
    ConvGeom {
        c_in,
        h: x.h(),
        w: x.w(),
        kh,
        kw,
        pad,
        oh,
        ow,
    }
}

/// Stride-1 zero-padded 2-D convolution. `weight` is `(c_out, c_in, kh, kw)`,
/// `bias` holds `c_out` values in any shape.
pub fn conv2d<E: Real>(x: &Tensor<E>, weight: &Tensor<E>, bias: &Tensor<E>, pad: usize) -> Result<Tensor<E>> {
    let (oh, ow) = check_conv_args(x, weight, bias, pad)?;
    let g = geom(x, weight, pad, oh, ow);
    let c_out = weight.n();
    let (k, p) = (g.rows(), g.cols());
    let mut out = Tensor::zeros([x.n(), c_out, oh, ow]);
    out.data_mut()
        .par_chunks_mut(c_out * p)
        .enumerate()
        .for_each(|(n, dst)| {
            let mut col = vec![E::zero(); k * p];
            g.im2col(x.item(n), &mut col);
            matmul(c_out, k, p, weight.data(), false, &col, false, dst, false);
            for (co, row) in dst.chunks_mut(p).enumerate() {
                let b = bias.data()[co];
                row.iter_mut().for_each(|v| *v += b);
            }
        });
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input (when `need_input`), weight
/// and bias.
pub fn conv2d_backward<E: Real>(
    upstream: &Tensor<E>,
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    pad: usize,
    need_input: bool,
) -> Result<(Option<Tensor<E>>, Tensor<E>, Tensor<E>)> {
    let (oh, ow) = check_conv_args(x, weight, bias, pad)?;
    let c_out = weight.n();
    if upstream.shape() != [x.n(), c_out, oh, ow] {
        return Err(Error::shape(format!(
            "conv2d backward: upstream {:?} does not match output {:?}",
            upstream.shape(),
            [x.n(), c_out, oh, ow]
        )));
    }
    let g = geom(x, weight, pad, oh, ow);
    let (k, p) = (g.rows(), g.cols());
    let chw = x.c() * x.h() * x.w();
    let partials: Vec<(Vec<E>, Vec<E>, Vec<E>)> = (0..x.n())
        .into_par_iter()
        .map(|n| {
            let up = upstream.item(n);
            let mut col = vec![E::zero(); k * p];
            g.im2col(x.item(n), &mut col);
            let mut gw = vec![E::zero(); c_out * k];
            matmul(c_out, p, k, up, false, &col, true, &mut gw, false);
            let gb: Vec<E> = up.chunks(p).map(|row| row.iter().copied().sum()).collect();
            let mut gx = Vec::new();
            if need_input {
                matmul(k, c_out, p, weight.data(), true, up, false, &mut col, false);
                gx = vec![E::zero(); chw];
                g.col2im(&col, &mut gx);
            }
            (gx, gw, gb)
        })
        .collect();
    let mut grad_x = Vec::with_capacity(x.len());
    let mut grad_w = vec![E::zero(); weight.len()];
    let mut grad_b = vec![E::zero(); bias.len()];
    for (gx, gw, gb) in partials {
        grad_x.extend_from_slice(&gx);
        grad_w.iter_mut().zip(&gw).for_each(|(a, &b)| *a += b);
        grad_b.iter_mut().zip(&gb).for_each(|(a, &b)| *a += b);
    }
    let grad_x = if need_input {
        Some(Tensor::from_vec(x.shape(), grad_x)?)
    } else {
        None
    };
    Ok((
        grad_x,
        Tensor::from_vec(weight.shape(), grad_w)?,
        Tensor::from_vec(bias.shape(), grad_b)?,
    ))
}

pub fn relu<E: Real>(x: &Tensor<E>) -> Tensor<E> {
    x.map(|v| if v > E::zero() { v } else { E::zero() })
}

/// Passes gradient only where `x > 0`.
pub fn relu_backward<E: Real>(upstream: &Tensor<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
    upstream.zip_map(x, |g, v| if v > E::zero() { g } else { E::zero() })
}

/// `(n, c·r², h, w) -> (n, c, r·h, r·w)`.
pub fn pixel_shuffle<E: Real>(x: &Tensor<E>, r: usize) -> Result<Tensor<E>> {
    let [n, c, h, w] = x.shape();
    if r == 0 || c % (r * r) != 0 {
        return Err(Error::shape(format!(
            "pixel_shuffle: {c} channels not divisible by {r}²"
        )));
    }
    let co = c / (r * r);
    let mut out = Tensor::zeros([n, co, h * r, w * r]);
    let (oh, ow) = (h * r, w * r);
    let dst = out.data_mut();
    for b in 0..n {
        for ch in 0..co {
            for a in 0..r {
                for bb in 0..r {
                    let src = x.plane(b, ch * r * r + a * r + bb);
                    let base = (b * co + ch) * oh * ow;
                    for i in 0..h {
                        let row = base + (r * i + a) * ow + bb;
                        for j in 0..w {
                            dst[row + r * j] = src[i * w + j];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_shuffle`]; also its exact adjoint.
pub fn pixel_unshuffle<E: Real>(x: &Tensor<E>, r: usize) -> Result<Tensor<E>> {
    let [n, c, oh, ow] = x.shape();
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return Err(Error::shape(format!(
            "pixel_unshuffle: {oh}x{ow} not divisible by {r}"
        )));
    }
    let (h, w) = (oh / r, ow / r);
    let mut out = Tensor::zeros([n, c * r * r, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            for a in 0..r {
                for bb in 0..r {
                    let oc = ch * r * r + a * r + bb;
                    for i in 0..h {
                        for j in 0..w {
                            let v = src[(r * i + a) * ow + r * j + bb];
                            out.set([b, oc, i, j], v);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Concatenates along the channel axis, preserving part order.
pub fn concat_channels<E: Real>(parts: &[&Tensor<E>]) -> Result<Tensor<E>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat_channels: no parts"))?;
    let [n, _, h, w] = first.shape();
    let mut c_total = 0;
    for p in parts {
        if p.n() != n || p.h() != h || p.w() != w {
            return Err(Error::shape(format!(
                "concat_channels: {:?} vs {:?}",
                p.shape(),
                first.shape()
            )));
        }
        c_total += p.c();
    }
    let mut data = Vec::with_capacity(n * c_total * h * w);
    for b in 0..n {
        for p in parts {
            data.extend_from_slice(p.item(b));
        }
    }
    Tensor::from_vec([n, c_total, h, w], data)
}

/// Splits a channel-concatenated gradient back into per-part gradients.
pub fn split_channels<E: Real>(x: &Tensor<E>, channels: &[usize]) -> Result<Vec<Tensor<E>>> {
    if channels.iter().sum::<usize>() != x.c() {
        return Err(Error::shape("split_channels: channel counts do not sum"));
    }
    let [n, _, h, w] = x.shape();
    let hw = h * w;
    let mut parts: Vec<Vec<E>> = channels.iter().map(|c| Vec::with_capacity(n * c * hw)).collect();
    for b in 0..n {
        let item = x.item(b);
        let mut off = 0;
        for (part, &c) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&item[off..off + c * hw]);
            off += c * hw;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor::from_vec([n, c, h, w], d))
        .collect()
}

pub fn add<E: Real>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    a.zip_map(b, |x, y| x + y)
}

/// Mean squared error; returns the loss as a plain number.
pub fn l2_loss<E: Real>(pred: &Tensor<E>, target: &Tensor<E>) -> Result<E> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "l2_loss: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Ok(E::zero());
    }
    let sum: E = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    Ok(sum / E::from_f64(pred.len() as f64))
}

/// `d loss / d pred = 2 (pred - target) / count`, scaled by `upstream`.
pub fn l2_loss_backward<E: Real>(upstream: E, pred: &Tensor<E>, target: &Tensor<E>) -> Result<Tensor<E>> {
    let scale = upstream * E::from_f64(2.0 / pred.len().max(1) as f64);
    pred.zip_map(target, |p, t| (p - t) * scale)
}
