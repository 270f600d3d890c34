//! Acceptance criteria, one PASS/FAIL line each. Run with
//! `cargo test -p udvd-cli --test acceptance`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use udvd::bench::{bench_dynconv, with_threads, BenchBaseline};
use udvd::degrade::{bicubic_resize, encode_degradation, gaussian_kernel, DegradationParams, PcaBasis, BLUR_KERNEL_SIZE};
use udvd::dynconv::{dynamic_conv, dynamic_conv_reference, dynamic_conv_upsample, KernelLayout, PerPixelKernels};
use udvd::gradcheck;
use udvd::metrics::{psnr_y, ssim_y, SSIM_C1};
use udvd::model::{Udvd, UdvdConfig};
use udvd::rng::CounterRng;
use udvd::tensor::ops::l2_loss;
use udvd::train::{Batch, PatchBank, Sample, TrainConfig, Trainer};
use udvd::viz::render_kernel_viz;
use udvd::Tensor;

const TOY_STEPS: u64 = 3000;
const TOY_PATCH_LR: usize = 16;
const TOY_PATCHES: u64 = 8;
const TOY_PSNR: f64 = 32.0;
const EVAL_EVERY: u64 = 100;
/// Steps for the fixed-length multistage and degradation-awareness runs.
const ABLATION_STEPS: u64 = 600;
const AWARENESS_STEPS: u64 = 1200;

struct Line {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn random(shape: [usize; 4], seed: u64) -> Tensor<f32> {
    let rng = CounterRng::new(seed);
    let mut i = 0;
    Tensor::from_fn(shape, |_| {
        i += 1;
        rng.uniform_range_at(i, -1.0, 1.0) as f32
    })
}

fn operator_equivalence() -> Line {
    let start = Instant::now();
    let rng = CounterRng::new(2024);
    let mut worst = 0.0f64;
    let mut per_channel = 0;
    for i in 0..200u64 {
        let at = |j: u64, n: u64| rng.below_at(i * 16 + j, n) as usize;
        let k = [3, 5][at(0, 2)];
        let rate = 1 + at(1, 4);
        let layout = if rate == 1 && at(2, 2) == 1 {
            per_channel += 1;
            KernelLayout::per_channel(k)
        } else {
            KernelLayout::shared(k, rate)
        };
        let (h, w, c) = (1 + at(3, 32), 1 + at(4, 32), 1 + at(5, 3));
        let x = random([1, c, h, w], i * 2);
        let kern = PerPixelKernels::new(random([1, layout.channels(c), h, w], i * 2 + 1), layout).unwrap();
        let want = dynamic_conv_reference(&x, &kern).unwrap();
        let got = if rate == 1 { dynamic_conv(&x, &kern) } else { dynamic_conv_upsample(&x, &kern) }.unwrap();
        worst = worst.max(got.max_abs_diff(&want));
    }
    let secs = start.elapsed().as_secs_f64();
    Line {
        name: "operator oracle equivalence",
        pass: worst <= 1e-5 && secs <= 60.0,
        detail: format!("200 instances ({per_channel} per-channel), max abs diff {worst:.2e}, {secs:.1}s"),
    }
}

fn gradient_suite() -> Line {
    let start = Instant::now();
    let reports = gradcheck::run_suite(0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<&str> = reports.iter().filter(|r| !r.ok()).map(|r| r.name.as_str()).collect();
    let worst = reports.iter().map(|r| r.pass_fraction()).fold(1.0, f64::min);
    let tiny = reports.iter().find(|r| r.name == "udvd_tiny").unwrap();
    Line {
        name: "gradient suite",
        pass: failed.is_empty() && secs <= 300.0,
        detail: format!(
            "{} cases, lowest pass fraction {:.4}, udvd_tiny {}/{} smooth entries ({} kinked, {}/{} counting kinked), failed {:?}, {secs:.1}s",
            reports.len(),
            worst,
            tiny.passed,
            tiny.checked,
            tiny.kinked,
            tiny.passed_all,
            tiny.entries,
            failed
        ),
    }
}

fn pca_bound(basis: &PcaBasis) -> Line {
    let rng = CounterRng::new(77);
    let mut worst = 0.0f64;
    for i in 0..500 {
        // Uniform widths never coincide with the 1000-point fitting grid.
        let eps = rng.uniform_range_at(i, 0.2, 3.0);
        let k = gaussian_kernel(eps, BLUR_KERNEL_SIZE).unwrap();
        let rec = basis.reconstruct(&basis.project(&k).unwrap());
        let num: f64 = k.weights().iter().zip(&rec).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = k.weights().iter().map(|a| a * a).sum();
        worst = worst.max((num / den).sqrt());
    }
    Line {
        name: "PCA bound",
        pass: basis.dim() == 15 && worst <= 1e-2,
        detail: format!("t={}, 500 unseen widths, worst relative L2 error {worst:.2e}", basis.dim()),
    }
}

fn degradation_determinism(dir: &Path) -> Line {
    let hr = dir.join("hr.png");
    udvd::imageio::save_png(&hr, &udvd::synthetic::scene(60, 72, 5)).unwrap();
    let mut files = Vec::new();
    let mut ok = true;
    for run in 0..2 {
        let (png, map) = (dir.join(format!("lr{run}.png")), dir.join(format!("lr{run}.map.ten")));
        let status = Command::new(env!("CARGO_BIN_EXE_udvd"))
            .args(["degrade", "--in", hr.to_str().unwrap(), "--out", png.to_str().unwrap()])
            .args(["--map", map.to_str().unwrap()])
            .args(["--eps", "1.3", "--sigma", "15", "--scale", "3", "--seed", "7"])
            .status()
            .unwrap();
        ok &= status.success();
        files.push((std::fs::read(&png).unwrap_or_default(), std::fs::read(&map).unwrap_or_default()));
    }
    let same = files[0] == files[1] && !files[0].0.is_empty() && !files[0].1.is_empty();
    Line {
        name: "degradation determinism",
        pass: ok && same,
        detail: format!(
            "two `udvd degrade` runs: png {} bytes, map {} bytes, identical={same}",
            files[0].0.len(),
            files[0].1.len()
        ),
    }
}

fn metric_closed_forms() -> Line {
    let gray = |y: f64| Tensor::<f64>::full([1, 3, 16, 16], (y - 16.0) / 219.0);
    let img = udvd::synthetic::scene(24, 24, 3).cast::<f64>();
    let checks = [
        ("psnr identical", psnr_y(&img, &img, 2).unwrap(), 99.0),
        ("psnr Y gap 1", psnr_y(&gray(100.0), &gray(101.0), 2).unwrap(), 10.0 * 65025f64.log10()),
        ("psnr Y gap 16", psnr_y(&gray(100.0), &gray(116.0), 2).unwrap(), 10.0 * (65025f64 / 256.0).log10()),
        ("ssim identical", ssim_y(&img, &img).unwrap(), 1.0),
        (
            "ssim 100 vs 110",
            ssim_y(&gray(100.0), &gray(110.0)).unwrap(),
            (2.0 * 100.0 * 110.0 + SSIM_C1) / (100.0f64 * 100.0 + 110.0 * 110.0 + SSIM_C1),
        ),
    ];
    let worst = checks.iter().map(|(_, got, want)| (got - want).abs()).fold(0.0, f64::max);
    let summary: Vec<String> = checks.iter().map(|(n, got, _)| format!("{n}={got:.6}")).collect();
    Line {
        name: "metric closed forms",
        pass: worst <= 1e-6,
        detail: format!("max deviation {worst:.1e}; {}", summary.join(", ")),
    }
}

fn toy_config(multistage: bool) -> TrainConfig {
    let mut cfg = TrainConfig::desk_default();
    cfg.model = UdvdConfig::desk_default().with_multistage(multistage);
    cfg.batch = TOY_PATCHES as usize;
    cfg.patch_lr = TOY_PATCH_LR;
    cfg.total_steps = TOY_STEPS;
    cfg.seed = 11;
    cfg
}

fn bank(settings: &[(f64, f64)], basis: &PcaBasis) -> PatchBank {
    let size = TOY_PATCH_LR * 2;
    let mut samples = Vec::new();
    for (si, &(eps, sigma)) in settings.iter().enumerate() {
        let params = DegradationParams::new(eps, sigma, 2).unwrap();
        for i in 0..TOY_PATCHES {
            let hr = udvd::synthetic::scene(size, size, 100 + i);
            samples.push(Sample::synthesize(hr, params, basis, 1000 * si as u64 + i).unwrap());
        }
    }
    PatchBank::new(samples, TOY_PATCHES as usize).unwrap()
}

fn final_psnr(model: &Udvd<f32>, batch: &Batch) -> f64 {
    let outs = model.predict(&batch.lr, &batch.map).unwrap();
    psnr_y(outs.last().unwrap(), &batch.hr, 2).unwrap()
}

struct ToyRun {
    model: Udvd<f32>,
    reached_at: Option<u64>,
    psnr: f64,
    bicubic: f64,
    final_loss: f64,
    first_loss: f64,
    elapsed: Duration,
}

/// Trains until the PSNR target is met (checked every `EVAL_EVERY` steps)
/// or `max_steps` is reached; with `stop_early` off it always runs
/// `max_steps`.
fn toy_train(multistage: bool, max_steps: u64, stop_early: bool, basis: &PcaBasis) -> ToyRun {
    let bank = bank(&[(1.3, 15.0)], basis);
    let all = bank.full_batch().unwrap();
    let bic = bicubic_resize(&all.lr, all.hr.h(), all.hr.w(), false).unwrap();
    let bicubic = psnr_y(&bic, &all.hr, 2).unwrap();
    let mut trainer = Trainer::new(toy_config(multistage)).unwrap();
    let start = Instant::now();
    let (mut reached_at, mut psnr, mut first_loss) = (None, 0.0, 0.0);
    for step in 1..=max_steps {
        let rec = trainer.step(&bank).unwrap();
        if step == 1 {
            first_loss = rec.loss;
        }
        if step % EVAL_EVERY == 0 || step == max_steps {
            psnr = final_psnr(trainer.model(), &all);
            if reached_at.is_none() && psnr >= TOY_PSNR && psnr >= bicubic + 1.0 {
                reached_at = Some(step);
                if stop_early {
                    break;
                }
            }
        }
    }
    let final_loss = trainer.evaluate_loss(&all).unwrap();
    ToyRun {
        model: trainer.into_model(),
        reached_at,
        psnr,
        bicubic,
        final_loss,
        first_loss,
        elapsed: start.elapsed(),
    }
}

fn toy_convergence(run: &ToyRun) -> Line {
    let secs = run.elapsed.as_secs_f64();
    Line {
        name: "toy convergence",
        pass: run.reached_at.is_some() && run.psnr >= run.bicubic + 1.0 && secs <= 1800.0,
        detail: format!(
            "desk config, 8 patches {}x{} HR, eps 1.3 sigma 15: PSNR-Y {:.2} dB at step {:?} (bicubic {:.2} dB), {secs:.0}s",
            TOY_PATCH_LR * 2,
            TOY_PATCH_LR * 2,
            run.psnr,
            run.reached_at,
            run.bicubic
        ),
    }
}

fn multistage_ablation(basis: &PcaBasis) -> Line {
    let on = toy_train(true, ABLATION_STEPS, false, basis);
    let off = toy_train(false, ABLATION_STEPS, false, basis);
    let all = bank(&[(1.3, 15.0)], basis).full_batch().unwrap();
    let final_l2 = |m: &Udvd<f32>| {
        let outs = m.predict(&all.lr, &all.map).unwrap();
        f64::from(l2_loss(outs.last().unwrap(), &all.hr).unwrap())
    };
    let (l_on, l_off) = (final_l2(&on.model), final_l2(&off.model));
    let converged = |r: &ToyRun| r.reached_at.is_some() && r.final_loss < 0.2 * r.first_loss;
    let distinct = l_on != l_off && on.model.params() != off.model.params();
    Line {
        name: "multistage ablation",
        pass: distinct && converged(&on) && converged(&off),
        detail: format!(
            "{ABLATION_STEPS} steps each: final-stage L2 on {l_on:.3e} vs off {l_off:.3e}; PSNR on {:.2} dB (target at {:?}), off {:.2} dB (target at {:?})",
            on.psnr, on.reached_at, off.psnr, off.reached_at
        ),
    }
}

fn degradation_awareness(basis: &PcaBasis) -> Line {
    let settings = [(0.2, 15.0), (2.6, 15.0)];
    let bank = bank(&settings, basis);
    let mut cfg = toy_config(true);
    cfg.total_steps = AWARENESS_STEPS;
    let mut trainer = Trainer::new(cfg).unwrap();
    let start = Instant::now();
    trainer.run(&bank, None, |_| Ok(())).unwrap();
    let model = trainer.model();
    let all = bank.full_batch().unwrap();
    let n = TOY_PATCHES as usize;
    // Swap the maps of the two settings: each LR patch gets the other width.
    let swapped: Vec<Tensor<f32>> = (0..2 * n).map(|i| all.map.item_tensor((i + n) % (2 * n))).collect();
    let matched = final_psnr(model, &all);
    let mismatched = {
        let outs = model.predict(&all.lr, &Tensor::stack(&swapped).unwrap()).unwrap();
        psnr_y(outs.last().unwrap(), &all.hr, 2).unwrap()
    };
    Line {
        name: "degradation awareness",
        pass: matched - mismatched >= 0.5,
        detail: format!(
            "{AWARENESS_STEPS} steps on eps {{0.2, 2.6}} x 8 patches: matched {matched:.2} dB, swapped maps {mismatched:.2} dB, margin {:.2} dB, {:.0}s",
            matched - mismatched,
            start.elapsed().as_secs_f64()
        ),
    }
}

fn kernel_visualization(model: &Udvd<f32>, basis: &PcaBasis, dir: &Path) -> Line {
    let lr = bank(&[(1.3, 15.0)], basis).samples()[0].lr.clone();
    let map = |eps, sigma| encode_degradation(&gaussian_kernel(eps, BLUR_KERNEL_SIZE).unwrap(), sigma, basis, lr.h(), lr.w()).unwrap();
    let (a, b) = (map(0.2, 0.0), map(1.6, 10.0));
    let mut zero_ok = true;
    let mut means = Vec::new();
    for block in 0..model.stages() {
        let same = udvd::viz::export_kernel_viz(model, &lr, &a, &a, block, &dir.join(format!("same{block}.png"))).unwrap();
        let png = image::open(dir.join(format!("same{block}.png"))).unwrap().to_rgb8();
        let x0 = 2 * (same.width as u32 + udvd::viz::SEPARATOR);
        let rendered_zero = (0..same.height as u32).all(|y| (0..same.width as u32).all(|x| png.get_pixel(x0 + x, y).0 == [0, 0, 0]));
        zero_ok &= rendered_zero && same.panels[2].iter().all(|&v| v == 0.0);
        means.push(render_kernel_viz(model, &lr, &a, &b, block).unwrap().difference_mean());
    }
    Line {
        name: "kernel visualization",
        pass: zero_ok && means.iter().all(|&m| m > 0.0),
        detail: format!("identical maps give zero difference panels: {zero_ok}; (0.2,0) vs (1.6,10) difference means per block {:?}", means.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>()),
    }
}

fn performance() -> Line {
    let baseline = BenchBaseline::shipped();
    let row = with_threads(baseline.threads, || bench_dynconv(baseline.op, baseline.size, baseline.k, 3, 0))
        .unwrap()
        .unwrap();
    Line {
        name: "performance",
        pass: row.speedup >= baseline.min_speedup,
        detail: format!(
            "{}x{} k={} r=1, {} worker: reference {:.1} ms, optimized {:.1} ms, speedup {:.1}x (threshold {}x)",
            row.size, row.size, row.k, baseline.threads, row.ref_ms, row.opt_ms, row.speedup, baseline.min_speedup
        ),
    }
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let basis = PcaBasis::default_fit();
    let mut lines = Vec::new();
    let mut report = |line: Line| {
        println!("{} {}: {}", if line.pass { "PASS" } else { "FAIL" }, line.name, line.detail);
        lines.push(line.pass);
    };
    report(operator_equivalence());
    report(gradient_suite());
    report(pca_bound(&basis));
    report(degradation_determinism(dir.path()));
    report(metric_closed_forms());
    let toy = toy_train(true, TOY_STEPS, true, &basis);
    report(toy_convergence(&toy));
    report(multistage_ablation(&basis));
    report(degradation_awareness(&basis));
    report(kernel_visualization(&toy.model, &basis, dir.path()));
    report(performance());
    let failed = lines.iter().filter(|&&p| !p).count();
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
