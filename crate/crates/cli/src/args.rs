use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use udvd::degrade::{KERNEL_WIDTH_RANGE, NOISE_LEVEL_RANGE};

#[derive(Parser, Debug)]
#[command(name = "udvd", version, about = "Super-resolution for variational degradations")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, env = "UDVD_THREADS", global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Blur, downsample and add noise to an HR image.
    Degrade(DegradeArgs),
    /// Degrade with kernel width and noise level varying linearly across columns.
    DegradeSpatial(DegradeSpatialArgs),
    /// Fit the PCA basis of the blur kernel family.
    PcaFit(PcaFitArgs),
    /// Train a network on a directory of HR images.
    Train(TrainArgs),
    /// Super-resolve an image with known degradation parameters.
    Infer(InferArgs),
    /// PSNR/SSIM on Y for matching file names in two directories.
    Eval(EvalArgs),
    /// Render per-pixel kernels under two degradation maps and their difference.
    VizKernels(VizArgs),
    /// Time the reference and optimized dynamic convolution.
    Bench(BenchArgs),
    /// Run the finite-difference gradient suite.
    GradCheck(GradCheckArgs),
}

fn ranged(s: &str, lo: f64, hi: f64) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if !(lo..=hi).contains(&v) {
        return Err(format!("{v} is outside [{lo}, {hi}]"));
    }
    Ok(v)
}

pub fn kernel_width(s: &str) -> Result<f64, String> {
    ranged(s, KERNEL_WIDTH_RANGE.0, KERNEL_WIDTH_RANGE.1)
}

pub fn noise_level(s: &str) -> Result<f64, String> {
    ranged(s, NOISE_LEVEL_RANGE.0, NOISE_LEVEL_RANGE.1)
}

pub fn scale(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v @ (2..=4)) => Ok(v),
        _ => Err(format!("{s:?} is not one of 2, 3, 4")),
    }
}

#[derive(Args, Debug)]
pub struct BasisArg {
    /// PCA basis written by `pca-fit` (defaults to the built-in fit).
    #[arg(long)]
    pub basis: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DegradeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Degradation map output (defaults to `<out stem>.map.ten`).
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Also write a JSON manifest describing the pair.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true, value_parser = kernel_width)]
    pub eps: f64,
    #[arg(long, allow_negative_numbers = true, value_parser = noise_level)]
    pub sigma: f64,
    #[arg(long, value_parser = scale)]
    pub scale: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub basis: BasisArg,
}

#[derive(Args, Debug)]
pub struct DegradeSpatialArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Kernel width at the left edge.
    #[arg(long, allow_negative_numbers = true, value_parser = kernel_width)]
    pub eps_left: f64,
    #[arg(long, allow_negative_numbers = true, value_parser = kernel_width)]
    pub eps_right: f64,
    #[arg(long, allow_negative_numbers = true, value_parser = noise_level)]
    pub sigma_left: f64,
    #[arg(long, allow_negative_numbers = true, value_parser = noise_level)]
    pub sigma_right: f64,
    #[arg(long, value_parser = scale)]
    pub scale: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub basis: BasisArg,
}

#[derive(Args, Debug)]
pub struct PcaFitArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = udvd::degrade::DEFAULT_PCA_DIM)]
    pub dim: usize,
    /// Number of kernel widths, evenly spaced over the training range.
    #[arg(long, default_value_t = udvd::degrade::DEFAULT_PCA_SAMPLES)]
    pub samples: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory of HR PNG images.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path; the configuration goes to `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// TrainConfig JSON; individual flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from the checkpoint at `--out`.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long, value_parser = scale)]
    pub scale: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Training log CSV (`step,loss,lr`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub basis: BasisArg,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, allow_negative_numbers = true, value_parser = kernel_width)]
    pub eps: f64,
    #[arg(long, allow_negative_numbers = true, value_parser = noise_level)]
    pub sigma: f64,
    /// Expected scale; must match the model.
    #[arg(long, value_parser = scale)]
    pub scale: Option<usize>,
    #[command(flatten)]
    pub basis: BasisArg,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub scale: usize,
    /// Pixels cropped per side (defaults to the scale).
    #[arg(long)]
    pub border: Option<usize>,
}

#[derive(Args, Debug)]
pub struct VizArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// LR input image.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, allow_negative_numbers = true, value_parser = kernel_width)]
    pub eps_a: f64,
    #[arg(long, allow_negative_numbers = true, value_parser = noise_level)]
    pub sigma_a: f64,
    #[arg(long, allow_negative_numbers = true, value_parser = kernel_width)]
    pub eps_b: f64,
    #[arg(long, allow_negative_numbers = true, value_parser = noise_level)]
    pub sigma_b: f64,
    /// Dynamic block whose kernels are drawn.
    #[arg(long, default_value_t = 0)]
    pub block: usize,
    #[command(flatten)]
    pub basis: BasisArg,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// dynconv or dynconv-upsample.
    #[arg(long, default_value = "dynconv")]
    pub op: String,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Omit the CSV header line.
    #[arg(long)]
    pub no_header: bool,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
