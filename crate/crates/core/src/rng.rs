//! Counter-based random numbers.
//!
//! Every variate is a pure function of `(seed, stream, counter)`, so results
//! do not depend on evaluation order or on how work is split across threads.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A keyed stream of random values addressed by counter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix64(seed.wrapping_add(GOLDEN)),
        }
    }

    /// Derives an independent stream, e.g. per image, per step or per item.
    pub fn stream(self, id: u64) -> Self {
        Self {
            key: mix64(self.key ^ mix64(id.wrapping_mul(GOLDEN).wrapping_add(0x632B_E59B_D9B4_E019))),
        }
    }

    #[inline]
    pub fn u64_at(self, counter: u64) -> u64 {
        mix64(self.key.wrapping_add(mix64(counter.wrapping_add(1).wrapping_mul(GOLDEN))))
    }

    /// Uniform in the open interval (0, 1).
    #[inline]
    pub fn uniform_at(self, counter: u64) -> f64 {
        ((self.u64_at(counter) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi]`.
    pub fn uniform_range_at(self, counter: u64, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform_at(counter)
    }

    /// Uniform integer in `0..n`.
    pub fn below_at(self, counter: u64, n: u64) -> u64 {
        assert!(n > 0);
        ((self.u64_at(counter) as u128 * n as u128) >> 64) as u64
    }

    /// Standard normal variate (Box-Muller, cosine branch).
    #[inline]
    pub fn normal_at(self, counter: u64) -> f64 {
        let u1 = self.uniform_at(counter.wrapping_mul(2));
        let u2 = self.uniform_at(counter.wrapping_mul(2).wrapping_add(1));
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
