use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

const CUBIC_A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn cubic_weight(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (CUBIC_A + 2.0) * x * x * x - (CUBIC_A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        CUBIC_A * x * x * x - 5.0 * CUBIC_A * x * x + 8.0 * CUBIC_A * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// Source indices (edge-clamped) and normalized weights for each output
/// sample along one axis.
struct Contributions {
    taps: usize,
    index: Vec<usize>,
    weight: Vec<f64>,
}

fn contributions(in_len: usize, out_len: usize, antialias: bool) -> Contributions {
    let scale = out_len as f64 / in_len as f64;
    let stretch = if antialias && scale < 1.0 { scale } else { 1.0 };
    let support = 4.0 / stretch;
    let taps = support.ceil() as usize + 2;
    let mut index = Vec::with_capacity(out_len * taps);
    let mut weight = Vec::with_capacity(out_len * taps);
    for o in 0..out_len {
        let centre = (o as f64 + 0.5) / scale - 0.5;
        let left = (centre - support / 2.0).floor() as isize;
        let start = weight.len();
        for t in 0..taps {
            let p = left + t as isize;
            weight.push(stretch * cubic_weight(stretch * (centre - p as f64)));
            index.push(p.clamp(0, in_len as isize - 1) as usize);
        }
        let sum: f64 = weight[start..].iter().sum();
        weight[start..].iter_mut().for_each(|w| *w /= sum);
    }
    Contributions { taps, index, weight }
}

/// Separable bicubic resize (width pass, then height pass) with edge-clamped
/// sampling; when downscaling with `antialias` the kernel is stretched by the
/// inverse scale.
pub fn bicubic_resize<E: Real>(img: &Tensor<E>, out_h: usize, out_w: usize, antialias: bool) -> Result<Tensor<E>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::param(format!("resize target {out_h}x{out_w} is empty")));
    }
    let [n, c, h, w] = img.shape();
    if h == 0 || w == 0 {
        return Err(Error::shape("cannot resize an empty image"));
    }
    let cw = contributions(w, out_w, antialias);
    let ch = contributions(h, out_h, antialias);
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    let mut tmp = vec![0.0f64; h * out_w];
    for b in 0..n {
        for k in 0..c {
            let src = img.plane(b, k);
            for y in 0..h {
                let row = &src[y * w..(y + 1) * w];
                for x in 0..out_w {
                    let (idx, wt) = (&cw.index[x * cw.taps..(x + 1) * cw.taps], &cw.weight[x * cw.taps..(x + 1) * cw.taps]);
                    tmp[y * out_w + x] = idx.iter().zip(wt).map(|(&i, &wv)| row[i].as_f64() * wv).sum();
                }
            }
            let base = (b * c + k) * out_h * out_w;
            let dst = &mut out.data_mut()[base..base + out_h * out_w];
            for y in 0..out_h {
                let (idx, wt) = (&ch.index[y * ch.taps..(y + 1) * ch.taps], &ch.weight[y * ch.taps..(y + 1) * ch.taps]);
                for x in 0..out_w {
                    let v: f64 = idx.iter().zip(wt).map(|(&i, &wv)| tmp[i * out_w + x] * wv).sum();
                    dst[y * out_w + x] = E::from_f64(v);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    #[test]
    fn kernel_values() {
        assert_eq!(cubic_weight(0.0), 1.0);
        assert_eq!(cubic_weight(1.0), 0.0);
        assert_eq!(cubic_weight(2.0), 0.0);
        assert!((cubic_weight(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic_weight(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn constant_survives_any_resize() {
        let img = Tensor::<f64>::full([1, 2, 7, 9], 0.42);
        for (oh, ow, aa) in [(3, 4, true), (14, 18, true), (5, 20, false), (1, 1, true)] {
            let out = bicubic_resize(&img, oh, ow, aa).unwrap();
            assert!(out.data().iter().all(|&v| (v - 0.42).abs() < 1e-12));
        }
    }

    #[test]
    fn identity_resize() {
        let rng = CounterRng::new(2);
        let mut i = 0;
        let img = Tensor::<f32>::from_fn([1, 3, 6, 5], |_| {
            i += 1;
            rng.uniform_at(i) as f32
        });
        assert_eq!(bicubic_resize(&img, 6, 5, true).unwrap(), img);
    }

    #[test]
    fn ramp_halved_matches_scalar_weights() {
        // Independent evaluation: output o sits at input coordinate 2o + 0.5;
        // with the kernel stretched by 2 the taps at distance d weigh
        // 0.5·cubic(0.5·d), renormalized, and indices clamp to [0, 7].
        let img = Tensor::<f64>::from_fn([1, 1, 1, 8], |[_, _, _, x]| x as f64);
        let out = bicubic_resize(&img, 1, 4, true).unwrap();
        for o in 0..4 {
            let centre = 2.0 * o as f64 + 0.5;
            let (mut num, mut den) = (0.0, 0.0);
            for p in -6i32..=14 {
                let d = centre - p as f64;
                if d.abs() >= 4.0 {
                    continue;
                }
                let wgt = 0.5 * cubic_weight(0.5 * d);
                num += wgt * p.clamp(0, 7) as f64;
                den += wgt;
            }
            assert!((out.at([0, 0, 0, o]) - num / den).abs() < 1e-12, "o={o}");
        }
    }

    #[test]
    fn empty_target_is_rejected() {
        assert!(bicubic_resize(&Tensor::<f32>::zeros([1, 1, 4, 4]), 0, 2, true).is_err());
    }
}
