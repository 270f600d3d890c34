use std::path::Path;
use std::process::{Command, Output};

use udvd::imageio::{load_png, save_png};
use udvd::model::UdvdConfig;
use udvd::tensor::io::read_ten;
use udvd::train::TrainConfig;

fn udvd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_udvd"))
        .args(args)
        .env("UDVD_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_scene(path: &Path, h: usize, w: usize, seed: u64) {
    save_png(path, &udvd::synthetic::scene(h, w, seed)).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    let o = udvd(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("degrade-spatial"));

    let o = udvd(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));

    let o = udvd(&["degrade", "--in", "a.png", "--out", "b.png", "--eps", "-1", "--sigma", "15", "--scale", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--eps"), "{}", stderr(&o));

    let o = udvd(&["degrade", "--in", "a.png", "--out", "b.png", "--eps", "1.3", "--sigma", "99", "--scale", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--sigma"));

    let o = udvd(&["degrade", "--in", "a.png", "--out", "b.png", "--eps", "1.3", "--sigma", "15", "--scale", "5"]);
    assert_eq!(o.status.code(), Some(2));

    let o = udvd(&["degrade", "--in", "a.png", "--out", "b.png", "--eps", "1.3", "--sigma", "15", "--bogus", "1", "--scale", "2"]);
    assert_eq!(o.status.code(), Some(2));

    let o = udvd(&["degrade", "--out", "b.png", "--eps", "1.3", "--sigma", "15", "--scale", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lr.png");
    let o = udvd(&["degrade", "--in", "/nonexistent/hr.png", "--out", s(&out), "--eps", "1.3", "--sigma", "15", "--scale", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"), "{}", stderr(&o));
    assert_eq!(stderr(&o).lines().count(), 1);
}

#[test]
fn degrade_is_deterministic_and_writes_map_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let hr = dir.path().join("hr.png");
    write_scene(&hr, 36, 48, 1);
    let mut bytes = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("lr{run}.png"));
        let map = dir.path().join(format!("lr{run}.ten"));
        let manifest = dir.path().join(format!("m{run}.json"));
        let o = udvd(&[
            "degrade", "--in", s(&hr), "--out", s(&out), "--map", s(&map), "--manifest", s(&manifest),
            "--eps", "1.3", "--sigma", "15", "--scale", "3", "--seed", "7",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        bytes.push((std::fs::read(&out).unwrap(), std::fs::read(&map).unwrap()));
        if run == 0 {
            assert_eq!(load_png(&out).unwrap().shape(), [1, 3, 12, 16]);
            assert_eq!(read_ten(&map).unwrap().dims, vec![1, 16, 12, 16]);
            let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
            assert_eq!(doc["eps"], 1.3);
            assert_eq!(doc["sigma"], 15.0);
            assert_eq!(doc["scale"], 3);
            assert_eq!(doc["seed"], 7);
            assert_eq!(doc["map_path"], s(&map));
        }
    }
    assert_eq!(bytes[0], bytes[1]);

    let other = dir.path().join("lr_other.png");
    let o = udvd(&["degrade", "--in", s(&hr), "--out", s(&other), "--eps", "1.3", "--sigma", "15", "--scale", "3", "--seed", "8"]);
    assert!(o.status.success());
    assert_ne!(std::fs::read(&other).unwrap(), bytes[0].0);
    assert!(dir.path().join("lr_other.map.ten").is_file());
}

#[test]
fn degrade_spatial_and_pca_fit() {
    let dir = tempfile::tempdir().unwrap();
    let hr = dir.path().join("hr.png");
    write_scene(&hr, 32, 40, 2);
    let basis = dir.path().join("basis.ckpt");
    let o = udvd(&["pca-fit", "--out", s(&basis)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fitted = udvd::degrade::PcaBasis::from_entries(&udvd::tensor::io::read_checkpoint(&basis).unwrap()).unwrap();
    assert_eq!(fitted.dim(), 15);

    let out = dir.path().join("lr.png");
    let o = udvd(&[
        "degrade-spatial", "--in", s(&hr), "--out", s(&out), "--eps-left", "0.2", "--eps-right", "3.0",
        "--sigma-left", "0", "--sigma-right", "30", "--scale", "2", "--basis", s(&basis),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let map = read_ten(dir.path().join("lr.map.ten")).unwrap().to_tensor().unwrap();
    assert_eq!(map.shape(), [1, 16, 16, 20]);
    assert!((map.at([0, 15, 0, 0]) - 0.0).abs() < 1e-6);
    assert!((map.at([0, 15, 0, 19]) - 30.0 / 75.0).abs() < 1e-6);
}

#[test]
fn train_infer_eval_viz_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    for i in 0..2 {
        write_scene(&data.join(format!("img{i}.png")), 24, 24, 10 + i);
    }
    let cfg = TrainConfig {
        model: UdvdConfig::new(1, 8, "UD", 3, 2).unwrap(),
        batch: 2,
        lr0: 1e-4,
        halve_every: 100,
        total_steps: 3,
        patch_lr: 6,
        eps_range: (0.2, 3.0),
        sigma_range: (0.0, 75.0),
        seed: 1,
        checkpoint_every: 0,
    };
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let ckpt = dir.path().join("model.ckpt");
    let log = dir.path().join("log.csv");
    let o = udvd(&["train", "--data", s(&data), "--out", s(&ckpt), "--config", s(&cfg_path), "--log", s(&log)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("model.ckpt.json").is_file());
    let text = std::fs::read_to_string(&log).unwrap();
    assert!(text.starts_with("step,loss,lr\n"));
    assert_eq!(text.lines().count(), 4);

    let o = udvd(&["train", "--data", s(&data), "--out", s(&ckpt), "--resume", "--steps", "5", "--log", s(&log)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().last().unwrap().starts_with("5,"));

    let lr = dir.path().join("lr.png");
    write_scene(&lr, 10, 12, 3);
    let pred_dir = dir.path().join("pred");
    std::fs::create_dir(&pred_dir).unwrap();
    let sr = pred_dir.join("x.png");
    let o = udvd(&["infer", "--checkpoint", s(&ckpt), "--in", s(&lr), "--out", s(&sr), "--eps", "1.3", "--sigma", "15"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(load_png(&sr).unwrap().shape(), [1, 3, 20, 24]);

    let o = udvd(&["infer", "--checkpoint", s(&ckpt), "--in", s(&lr), "--out", s(&sr), "--eps", "1.3", "--sigma", "15", "--scale", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));

    let gt_dir = dir.path().join("gt");
    std::fs::create_dir(&gt_dir).unwrap();
    write_scene(&gt_dir.join("x.png"), 21, 24, 4);
    let o = udvd(&["eval", "--pred", s(&pred_dir), "--gt", s(&gt_dir), "--scale", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: udvd::train::EvalReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report.images.len(), 1);
    assert_eq!(report.border, 2);
    assert!(report.mean_psnr > 0.0 && report.mean_psnr < 99.0);

    let png = dir.path().join("viz.png");
    let o = udvd(&[
        "viz-kernels", "--checkpoint", s(&ckpt), "--in", s(&lr), "--out", s(&png),
        "--eps-a", "0.2", "--sigma-a", "0", "--eps-b", "0.2", "--sigma-b", "0", "--block", "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["difference_mean"], 0.0);
    let img = image::open(&png).unwrap();
    assert_eq!((img.width(), img.height()), (3 * 72 + 4, 60));

    let o = udvd(&[
        "viz-kernels", "--checkpoint", s(&ckpt), "--in", s(&lr), "--out", s(&png),
        "--eps-a", "0.2", "--sigma-a", "0", "--eps-b", "1.6", "--sigma-b", "10", "--block", "7",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bench_prints_a_csv_row() {
    let o = udvd(&["bench", "--op", "dynconv", "--size", "32", "--k", "5", "--repeats", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "op,size,k,ref_ms,opt_ms,speedup");
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(&fields[..3], ["dynconv", "32", "5"]);
    assert!(fields[5].parse::<f64>().unwrap() > 0.0);

    let o = udvd(&["bench", "--op", "nope"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn grad_check_passes() {
    let o = udvd(&["grad-check"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    for name in ["conv2d", "relu", "pixel_shuffle", "concat", "l2_loss", "dynamic_conv", "dynamic_conv_upsample_r2", "udvd_tiny"] {
        assert!(out.lines().any(|l| l.starts_with(&format!("PASS {name}:"))), "{name}\n{out}");
    }
}
