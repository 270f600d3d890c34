mod args;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;
use serde_json::json;

use args::{Cli, Command};
use udvd::degrade::{self, pca_fit, DegradationParams, PcaBasis, KERNEL_WIDTH_RANGE};
use udvd::tensor::io::{read_checkpoint, write_checkpoint, write_ten, TenArray};
use udvd::train::{self, RandomPatches, TrainConfig, Trainer};
use udvd::{bench, gradcheck, imageio, viz};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_basis(path: &Option<PathBuf>) -> Result<PcaBasis> {
    Ok(match path {
        Some(p) => PcaBasis::from_entries(&read_checkpoint(p)?)?,
        None => PcaBasis::default_fit(),
    })
}

fn default_map_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.map.ten"))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Degrade(a) => {
            let basis = load_basis(&a.basis.basis)?;
            let params = DegradationParams::new(a.eps, a.sigma, a.scale)?;
            let hr = imageio::load_png(&a.input)?;
            let lr = degrade::degrade(&hr, &params, a.seed)?;
            let map = degrade::encode_degradation(&params.kernel(), a.sigma, &basis, lr.h(), lr.w())?;
            let map_path = a.map.unwrap_or_else(|| default_map_path(&a.out));
            imageio::save_png(&a.out, &lr)?;
            write_ten(&map_path, &TenArray::from_tensor(map.tensor()))?;
            if let Some(m) = a.manifest {
                let doc = json!({
                    "hr_path": a.input,
                    "lr_path": a.out,
                    "map_path": map_path,
                    "eps": a.eps,
                    "sigma": a.sigma,
                    "scale": a.scale,
                    "seed": a.seed,
                });
                std::fs::write(&m, serde_json::to_string_pretty(&doc)?).with_context(|| format!("{}", m.display()))?;
            }
        }
        Command::DegradeSpatial(a) => {
            let basis = load_basis(&a.basis.basis)?;
            let hr = imageio::load_png(&a.input)?;
            let eps = (a.eps_left, a.eps_right);
            let sigma = (a.sigma_left, a.sigma_right);
            let lr = degrade::degrade_spatial(&hr, eps, sigma, a.scale, a.seed)?;
            let schedule = degrade::spatial_schedule(lr.w(), eps, sigma);
            let kernels = schedule
                .iter()
                .map(|&(e, _)| degrade::gaussian_kernel(e, degrade::BLUR_KERNEL_SIZE))
                .collect::<udvd::Result<Vec<_>>>()?;
            let columns: Vec<_> = kernels.iter().zip(&schedule).map(|(k, &(_, s))| (k, s)).collect();
            let map = degrade::encode_degradation_columns(&columns, &basis, lr.h())?;
            imageio::save_png(&a.out, &lr)?;
            write_ten(a.map.unwrap_or_else(|| default_map_path(&a.out)), &TenArray::from_tensor(map.tensor()))?;
        }
        Command::PcaFit(a) => {
            if a.samples < 2 {
                bail!("--samples must be at least 2");
            }
            let (lo, hi) = KERNEL_WIDTH_RANGE;
            let widths: Vec<f64> = (0..a.samples)
                .map(|i| lo + (hi - lo) * i as f64 / (a.samples - 1) as f64)
                .collect();
            let basis = pca_fit(&widths, a.dim)?;
            write_checkpoint(&a.out, &basis.to_entries())?;
        }
        Command::Train(a) => train_command(a)?,
        Command::Infer(a) => {
            let model = train::load_model(&a.checkpoint)?;
            let scale = a.scale.unwrap_or(model.config().scale);
            let params = DegradationParams::new(a.eps, a.sigma, scale)?;
            let basis = load_basis(&a.basis.basis)?;
            let lr = imageio::load_png(&a.input)?;
            let sr = train::infer(&model, &lr, &params, &basis)?;
            imageio::save_png(&a.out, &sr)?;
        }
        Command::Eval(a) => {
            let report = train::evaluate_dirs(&a.pred, &a.gt, a.scale, a.border.unwrap_or(a.scale))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::VizKernels(a) => {
            let model = train::load_model(&a.checkpoint)?;
            let basis = load_basis(&a.basis.basis)?;
            let lr = imageio::load_png(&a.input)?;
            let map = |eps: f64, sigma: f64| {
                degrade::encode_degradation(&degrade::gaussian_kernel(eps, degrade::BLUR_KERNEL_SIZE)?, sigma, &basis, lr.h(), lr.w())
            };
            let (ma, mb) = (map(a.eps_a, a.sigma_a)?, map(a.eps_b, a.sigma_b)?);
            let v = viz::export_kernel_viz(&model, &lr, &ma, &mb, a.block, &a.out)?;
            println!(
                "{}",
                json!({"panel_height": v.height, "panel_width": v.width, "difference_mean": v.difference_mean()})
            );
        }
        Command::Bench(a) => {
            let op = bench::BenchOp::parse(&a.op)?;
            let row = bench::bench_dynconv(op, a.size, a.k, a.repeats, 0)?;
            if !a.no_header {
                println!("{}", bench::CSV_HEADER);
            }
            println!("{}", row.csv());
        }
        Command::GradCheck(a) => {
            let reports = gradcheck::run_suite(a.seed)?;
            let mut failed = Vec::new();
            for r in &reports {
                println!(
                    "{} {}: {}/{} within {:e} ({} kinked of {}), max rel {:.2e}",
                    if r.ok() { "PASS" } else { "FAIL" },
                    r.name,
                    r.passed,
                    r.checked,
                    gradcheck::REL_TOL,
                    r.kinked,
                    r.entries,
                    r.max_rel
                );
                if !r.ok() {
                    failed.push(r.name.clone());
                }
            }
            if !failed.is_empty() {
                bail!("gradient check failed for {}", failed.join(", "));
            }
        }
    }
    Ok(())
}

fn train_command(a: args::TrainArgs) -> Result<()> {
    let mut trainer = if a.resume {
        Trainer::load(&a.out).context("resume")?
    } else {
        let mut cfg = match &a.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("{}", p.display()))?;
                serde_json::from_str::<TrainConfig>(&text).with_context(|| format!("{}", p.display()))?
            }
            None => TrainConfig::desk_default(),
        };
        if let Some(v) = a.batch {
            cfg.batch = v;
        }
        if let Some(v) = a.lr {
            cfg.lr0 = v;
        }
        if let Some(v) = a.patch {
            cfg.patch_lr = v;
        }
        if let Some(v) = a.seed {
            cfg.seed = v;
        }
        if let Some(v) = a.scale {
            cfg.model = udvd::model::UdvdConfig::new(cfg.model.n_res_blocks, cfg.model.trunk_channels, &cfg.model.block_seq, cfg.model.k, v)?
                .with_multistage(cfg.model.multistage);
        }
        Trainer::new(cfg)?
    };
    if let Some(v) = a.steps {
        trainer.set_total_steps(v);
    }
    if let Some(v) = a.checkpoint_every {
        trainer.set_checkpoint_every(v);
    }
    let images = train::load_dataset(&a.data)?;
    let source = RandomPatches::new(images, load_basis(&a.basis.basis)?, trainer.config())?;

    let mut log = match &a.log {
        Some(p) => {
            let fresh = !a.resume || !p.exists();
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(!fresh)
                .write(true)
                .truncate(fresh)
                .open(p)
                .with_context(|| format!("{}", p.display()))?;
            if fresh {
                writeln!(f, "step,loss,lr")?;
            }
            Some(std::io::BufWriter::new(f))
        }
        None => None,
    };
    let total = trainer.config().total_steps;
    trainer.run(&source, Some(&a.out), |r| {
        if let Some(f) = log.as_mut() {
            writeln!(f, "{},{},{}", r.step, r.loss, r.lr).map_err(|e| udvd::Error::Format(format!("log: {e}")))?;
        }
        if r.step % 100 == 0 || r.step == total {
            eprintln!("step {}/{} loss {:.6} lr {:.2e}", r.step, total, r.loss, r.lr);
        }
        Ok(())
    })?;
    if let Some(mut f) = log {
        f.flush()?;
    }
    Ok(())
}
