use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::CounterRng;
use crate::tensor::Tensor;

/// Adds i.i.d. Gaussian noise with standard deviation `sigma / 255`. The
/// variate for each pixel is keyed by `(seed, batch item, pixel index)`;
/// values are not clipped.
pub fn add_awgn<E: Real>(img: &Tensor<E>, sigma: f64, seed: u64) -> Result<Tensor<E>> {
    add_awgn_columns(img, &vec![sigma; img.w()], seed)
}

/// Like [`add_awgn`] with a noise level per image column.
pub fn add_awgn_columns<E: Real>(img: &Tensor<E>, sigmas: &[f64], seed: u64) -> Result<Tensor<E>> {
    let w = img.w();
    if sigmas.len() != w {
        return Err(Error::shape(format!("{} column noise levels for width {w}", sigmas.len())));
    }
    if let Some(bad) = sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::param(format!("noise level must be non-negative, got {bad}")));
    }
    let rng = CounterRng::new(seed);
    let chw = img.c() * img.h() * w;
    let mut out = img.clone();
    for (b, item) in out.data_mut().chunks_mut(chw.max(1)).enumerate() {
        let stream = rng.stream(b as u64);
        for (p, v) in item.iter_mut().enumerate() {
            let sigma = sigmas[p % w];
            if sigma == 0.0 {
                continue;
            }
            *v = E::from_f64(v.as_f64() + sigma / 255.0 * stream.normal_at(p as u64));
        }
    }
    Ok(out)
}
