//! Procedural RGB test scenes in `[0, 1]`, used where no photographs are at
//! hand (tests, demos, the toy training task).

use crate::rng::CounterRng;
use crate::tensor::Tensor;

/// A smooth colour gradient with a few soft-edged discs and a gentle
/// sinusoidal texture. Deterministic in `seed`.
pub fn scene(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let rng = CounterRng::new(seed).stream(0x5CE4E);
    let mut c = 0u64;
    let mut next = |lo: f64, hi: f64| {
        c += 1;
        rng.uniform_range_at(c, lo, hi)
    };
    let base: Vec<[f64; 3]> = (0..3).map(|_| [next(0.2, 0.6), next(-0.25, 0.25), next(-0.25, 0.25)]).collect();
    let discs: Vec<(f64, f64, f64, [f64; 3])> = (0..4)
        .map(|_| {
            (
                next(0.1, 0.9),
                next(0.1, 0.9),
                next(0.12, 0.3),
                [next(-0.3, 0.3), next(-0.3, 0.3), next(-0.3, 0.3)],
            )
        })
        .collect();
    let (fx, fy, phase, amp) = (next(2.0, 5.0), next(2.0, 5.0), next(0.0, std::f64::consts::TAU), next(0.03, 0.08));
    let size = h.max(w).max(1) as f64;
    Tensor::from_fn([1, 3, h, w], |[_, ch, y, x]| {
        let (u, v) = (x as f64 / size, y as f64 / size);
        let [b0, bu, bv] = base[ch];
        let mut val = b0 + bu * u + bv * v;
        for &(cx, cy, r, col) in &discs {
            let d = ((u - cx).powi(2) + (v - cy).powi(2)).sqrt();
            // logistic edge a couple of pixels wide
            let edge = 1.0 / (1.0 + ((d - r) * size / 1.5).exp());
            val += col[ch] * edge;
        }
        val += amp * (std::f64::consts::TAU * (fx * u + fy * v) + phase + ch as f64).sin();
        val.clamp(0.0, 1.0) as f32
    })
}
