//! Central finite-difference checks of the analytic gradients, run in f64.
//!
//! Each case maps a set of input tensors to a scalar through the op under
//! test followed by an L2 readout against a fixed random target. Entries
//! are compared by relative error with a small absolute floor; entries whose
//! stencil crosses a ReLU kink are counted but not judged.

use crate::degrade::{encode_degradation, gaussian_kernel, PcaBasis};
use crate::dynconv::KernelLayout;
use crate::error::Result;
use crate::model::{build_udvd, multistage_loss, UdvdConfig, IMAGE_CHANNELS, MAP_CHANNELS};
use crate::rng::CounterRng;
use crate::tensor::{Graph, Tensor, Var};

pub const FD_STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-3;
pub const PASS_FRACTION: f64 = 0.99;
/// Denominator floor for entries whose true gradient is essentially zero.
pub const REL_FLOOR: f64 = 1e-8;

/// Outcome of one case. An entry is `kinked` when the `+h` or `-h`
/// evaluation switches any ReLU relative to the base point; its difference
/// quotient then spans two linear pieces and says nothing about the
/// derivative, so it is excluded from `checked`.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub entries: usize,
    pub kinked: usize,
    /// Entries within tolerance, kinked ones included.
    pub passed_all: usize,
    pub checked: usize,
    pub passed: usize,
    pub max_rel: f64,
}

/// A case whose stencils mostly straddle kinks proves nothing.
pub const MAX_KINKED_FRACTION: f64 = 0.5;

impl CheckReport {
    pub fn ok(&self) -> bool {
        self.checked > 0
            && self.passed as f64 >= PASS_FRACTION * self.checked as f64
            && self.kinked as f64 <= MAX_KINKED_FRACTION * self.entries as f64
    }

    pub fn pass_fraction(&self) -> f64 {
        self.passed as f64 / self.checked.max(1) as f64
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Uniform values in `[-1, 1]` pushed away from zero so that ReLU kinks are
/// not straddled by the finite-difference step.
pub fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let rng = CounterRng::new(seed);
    let mut i = 0;
    Tensor::from_fn(shape, |_| {
        i += 1;
        let u = rng.uniform_range_at(i, -1.0, 1.0);
        if u.abs() < 0.05 {
            u.signum() * 0.05 + u
        } else {
            u
        }
    })
}

/// Compares `graph.backward` against central differences for (a sample of
/// at most `max_entries` entries per input of) every input.
pub fn check_fn(
    name: &str,
    inputs: &[Tensor<f64>],
    max_entries: usize,
    seed: u64,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<CheckReport> {
    let eval = |values: &[Tensor<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok((g, vars, out))
    };
    let (g, vars, out) = eval(inputs)?;
    let base_pattern = g.relu_pattern();
    let mut grads = g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.take_or_zeros(v, t.shape()))
        .collect::<Result<_>>()?;

    let rng = CounterRng::new(seed);
    let mut values = inputs.to_vec();
    let (mut entries, mut kinked, mut passed_all) = (0, 0, 0);
    let (mut checked, mut passed, mut max_rel) = (0, 0, 0.0f64);
    for (ti, grad) in analytic.iter().enumerate() {
        let len = values[ti].len();
        let mut picks: Vec<usize> = (0..len).collect();
        if len > max_entries {
            let stream = rng.stream(ti as u64);
            for j in 0..max_entries {
                let k = j + stream.below_at(j as u64, (len - j) as u64) as usize;
                picks.swap(j, k);
            }
            picks.truncate(max_entries);
        }
        for idx in picks {
            let orig = values[ti].data()[idx];
            values[ti].data_mut()[idx] = orig + FD_STEP;
            let (gp, _, o) = eval(&values)?;
            let plus = gp.value(o)?.data()[0];
            values[ti].data_mut()[idx] = orig - FD_STEP;
            let (gm, _, o) = eval(&values)?;
            let minus = gm.value(o)?.data()[0];
            let kink = gp.relu_pattern() != base_pattern || gm.relu_pattern() != base_pattern;
            values[ti].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let rel = relative_error(grad.data()[idx], numeric);
            entries += 1;
            if rel <= REL_TOL {
                passed_all += 1;
            }
            if kink {
                kinked += 1;
                continue;
            }
            checked += 1;
            if rel <= REL_TOL {
                passed += 1;
            }
            max_rel = max_rel.max(rel);
        }
    }
    Ok(CheckReport {
        name: name.to_owned(),
        entries,
        kinked,
        passed_all,
        checked,
        passed,
        max_rel,
    })
}

fn readout(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let target = random_tensor(g.value(out)?.shape(), seed);
    let t = g.constant(target);
    g.l2_loss(out, t)
}

/// Every differentiable operation plus the tiny end-to-end network.
pub fn run_suite(seed: u64) -> Result<Vec<CheckReport>> {
    let r = |shape, k: u64| random_tensor(shape, seed.wrapping_mul(1000).wrapping_add(k));
    let full = usize::MAX;
    let mut reports = Vec::new();

    reports.push(check_fn(
        "conv2d",
        &[r([2, 3, 5, 6], 1), r([4, 3, 3, 3], 2), r([1, 4, 1, 1], 3)],
        full,
        seed,
        |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], 1)?;
            readout(g, y, 4)
        },
    )?);
    reports.push(check_fn("relu", &[r([2, 3, 4, 4], 5)], full, seed, |g, v| {
        let y = g.relu(v[0])?;
        readout(g, y, 6)
    })?);
    reports.push(check_fn("pixel_shuffle", &[r([1, 12, 3, 4], 7)], full, seed, |g, v| {
        let y = g.pixel_shuffle(v[0], 2)?;
        readout(g, y, 8)
    })?);
    reports.push(check_fn("concat", &[r([2, 2, 3, 3], 9), r([2, 3, 3, 3], 10)], full, seed, |g, v| {
        let y = g.concat_channels(&[v[0], v[1]])?;
        readout(g, y, 11)
    })?);
    reports.push(check_fn("add", &[r([1, 2, 3, 3], 12), r([1, 2, 3, 3], 13)], full, seed, |g, v| {
        let y = g.add(v[0], v[1])?;
        let y = g.scale(y, 1.5)?;
        readout(g, y, 14)
    })?);
    reports.push(check_fn("l2_loss", &[r([2, 3, 4, 4], 15), r([2, 3, 4, 4], 16)], full, seed, |g, v| {
        g.l2_loss(v[0], v[1])
    })?);

    let dyn_cases = [
        ("dynamic_conv", KernelLayout::shared(3, 1), 6),
        ("dynamic_conv_k5", KernelLayout::shared(5, 1), 6),
        ("dynamic_conv_per_channel", KernelLayout::per_channel(3), 5),
        ("dynamic_conv_upsample_r2", KernelLayout::shared(3, 2), 5),
        ("dynamic_conv_upsample_r3", KernelLayout::shared(3, 3), 4),
    ];
    for (i, (name, layout, n)) in dyn_cases.into_iter().enumerate() {
        let k = 20 + 3 * i as u64;
        let x = r([2, 3, n, n + 1], k);
        let kern = r([2, layout.channels(3), n, n + 1], k + 1);
        reports.push(check_fn(name, &[x, kern], full, seed, move |g, v| {
            let y = g.dynamic_conv(v[0], v[1], layout)?;
            readout(g, y, k + 2)
        })?);
    }

    reports.push(check_udvd(seed, 128)?);
    Ok(reports)
}

/// End-to-end check of the tiny network (8 trunk channels, one residual
/// block, `UD`, 8x8 input) over a sample of entries of every parameter and
/// of the input image.
pub fn check_udvd(seed: u64, max_entries: usize) -> Result<CheckReport> {
    let config = UdvdConfig::new(1, 8, "UD", 5, 2)?;
    let model = build_udvd(&config, seed)?.cast::<f64>();
    let basis = PcaBasis::default_fit();
    let map = encode_degradation(&gaussian_kernel(1.3, 15)?, 15.0, &basis, 8, 8)?
        .into_tensor()
        .cast::<f64>();
    debug_assert_eq!(map.c(), MAP_CHANNELS);
    let lr = crate::synthetic::scene(8, 8, seed).cast::<f64>();
    let hr = random_tensor([1, IMAGE_CHANNELS, 16, 16], seed ^ 0x5eed).map(|v| 0.5 + 0.5 * v);
    let mut inputs: Vec<Tensor<f64>> = model.params().iter().map(|p| p.value.clone()).collect();
    inputs.push(lr);
    let n_params = model.params().len();
    check_fn("udvd_tiny", &inputs, max_entries, seed, |g, v| {
        let m = g.constant(map.clone());
        let outs = model.forward(g, &v[..n_params], v[n_params], m)?;
        let images: Vec<Var> = outs.iter().map(|o| o.image).collect();
        multistage_loss(g, &images, &hr, true)
    })
}
