//! Timing of the reference dynamic convolution against the optimized one.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynconv::{dynamic_conv, dynamic_conv_reference, dynamic_conv_upsample, KernelLayout, PerPixelKernels};
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor::Tensor;

pub const CSV_HEADER: &str = "op,size,k,ref_ms,opt_ms,speedup";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchOp {
    Dynconv,
    DynconvUpsample,
}

impl BenchOp {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dynconv" => Ok(Self::Dynconv),
            "dynconv-upsample" => Ok(Self::DynconvUpsample),
            _ => Err(Error::param(format!("unknown benchmark op {s:?} (dynconv, dynconv-upsample)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Dynconv => "dynconv",
            Self::DynconvUpsample => "dynconv-upsample",
        }
    }

    fn rate(self) -> usize {
        match self {
            Self::Dynconv => 1,
            Self::DynconvUpsample => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub op: String,
    pub size: usize,
    pub k: usize,
    pub ref_ms: f64,
    pub opt_ms: f64,
    pub speedup: f64,
}

impl BenchRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{:.3},{:.3},{:.2}",
            self.op, self.size, self.k, self.ref_ms, self.opt_ms, self.speedup
        )
    }
}

/// Threshold file shipped with the crate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchBaseline {
    pub op: BenchOp,
    pub size: usize,
    pub k: usize,
    pub threads: usize,
    pub min_speedup: f64,
}

impl BenchBaseline {
    pub fn shipped() -> Self {
        serde_json::from_str(include_str!("../bench_baseline.json")).expect("bundled baseline parses")
    }
}

fn best_of_ms(repeats: usize, mut f: impl FnMut() -> Result<Tensor<f32>>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        std::hint::black_box(f()?);
        best = best.min(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(best)
}

/// Best-of-`repeats` wall times on a 3-channel `size x size` input. Runs on
/// the current rayon pool; the reference is single-threaded by nature.
pub fn bench_dynconv(op: BenchOp, size: usize, k: usize, repeats: usize, seed: u64) -> Result<BenchRow> {
    let layout = KernelLayout::shared(k, op.rate());
    layout.validate()?;
    let rng = CounterRng::new(seed);
    let mut i = 0;
    let x = Tensor::from_fn([1, 3, size, size], |_| {
        i += 1;
        rng.uniform_at(i) as f32
    });
    let kernels = PerPixelKernels::new(
        Tensor::from_fn([1, layout.channels(3), size, size], |_| {
            i += 1;
            (rng.uniform_at(i) as f32 - 0.5) / layout.taps() as f32
        }),
        layout,
    )?;
    let fast = |x: &Tensor<f32>| match op {
        BenchOp::Dynconv => dynamic_conv(x, &kernels),
        BenchOp::DynconvUpsample => dynamic_conv_upsample(x, &kernels),
    };
    fast(&x)?;
    let ref_ms = best_of_ms(repeats, || dynamic_conv_reference(&x, &kernels))?;
    let opt_ms = best_of_ms(repeats, || fast(&x))?;
    Ok(BenchRow {
        op: op.name().into(),
        size,
        k,
        ref_ms,
        opt_ms,
        speedup: ref_ms / opt_ms,
    })
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
