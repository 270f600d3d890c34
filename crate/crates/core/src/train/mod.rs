//! Training loop, inference and evaluation.

mod augment;
mod data;
mod eval;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use augment::Augment;
pub use data::{list_images, load_dataset, sample_patch, Batch, BatchSource, PatchBank, PatchSpec, RandomPatches, Sample};
pub use eval::{evaluate_dirs, evaluate_pairs, EvalReport, ImageScore};

use crate::degrade::{encode_degradation, DegradationParams, PcaBasis, KERNEL_WIDTH_RANGE, NOISE_LEVEL_RANGE};
use crate::error::{Error, Result};
use crate::model::{build_udvd, multistage_loss, Udvd, UdvdConfig};
use crate::tensor::io::{read_checkpoint, write_checkpoint, TenArray};
use crate::tensor::{Adam, AdamConfig, Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: UdvdConfig,
    pub batch: usize,
    pub lr0: f64,
    pub halve_every: u64,
    pub total_steps: u64,
    pub patch_lr: usize,
    pub eps_range: (f64, f64),
    pub sigma_range: (f64, f64),
    pub seed: u64,
    /// Write an intermediate checkpoint every this many steps (0: only at
    /// the end).
    #[serde(default)]
    pub checkpoint_every: u64,
}

impl TrainConfig {
    pub fn paper_default(scale: usize) -> Result<Self> {
        Ok(Self {
            model: UdvdConfig::paper_default(scale)?,
            batch: 32,
            lr0: 1e-4,
            halve_every: 200_000,
            total_steps: 1_000_000,
            patch_lr: 48,
            eps_range: KERNEL_WIDTH_RANGE,
            sigma_range: NOISE_LEVEL_RANGE,
            seed: 0,
            checkpoint_every: 10_000,
        })
    }

    pub fn desk_default() -> Self {
        Self {
            model: UdvdConfig::desk_default(),
            batch: 4,
            lr0: 1e-4,
            halve_every: 200_000,
            total_steps: 3000,
            patch_lr: 48,
            eps_range: KERNEL_WIDTH_RANGE,
            sigma_range: NOISE_LEVEL_RANGE,
            seed: 0,
            checkpoint_every: 0,
        }
    }

    pub fn patch_hr(&self) -> usize {
        self.patch_lr * self.model.scale
    }

    pub fn validated(mut self) -> Result<Self> {
        self.model = self.model.validated()?;
        if self.batch == 0 || self.patch_lr == 0 || self.halve_every == 0 {
            return Err(Error::Config("batch, patch_lr and halve_every must be positive".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        for (name, (lo, hi)) in [("eps_range", self.eps_range), ("sigma_range", self.sigma_range)] {
            if !(lo <= hi) {
                return Err(Error::Config(format!("{name} is empty: [{lo}, {hi}]")));
            }
        }
        Ok(self)
    }

    /// Learning rate for a 1-indexed step: halved after every
    /// `halve_every` completed steps.
    pub fn lr_at(&self, step: u64) -> f64 {
        let halvings = step.saturating_sub(1) / self.halve_every;
        self.lr0 * 0.5f64.powi(halvings.min(1000) as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: TrainConfig,
    step: u64,
}

/// Path of the JSON file stored next to a checkpoint.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Model, optimizer state and step counter.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    model: Udvd<f32>,
    adam: Adam<f32>,
    step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        let config = config.validated()?;
        let model = build_udvd(&config.model, config.seed)?;
        let adam = Adam::new(AdamConfig::default(), model.params());
        Ok(Self {
            config,
            model,
            adam,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Udvd<f32> {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Udvd<f32> {
        &mut self.model
    }

    pub fn into_model(self) -> Udvd<f32> {
        self.model
    }

    pub fn set_total_steps(&mut self, steps: u64) {
        self.config.total_steps = steps;
    }

    pub fn set_checkpoint_every(&mut self, every: u64) {
        self.config.checkpoint_every = every;
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    /// Loss of the model on a batch without updating anything.
    pub fn evaluate_loss(&self, batch: &Batch) -> Result<f64> {
        let mut g = Graph::new();
        let vars = self.model.params().bind(&mut g);
        let (lr, map) = (g.constant(batch.lr.clone()), g.constant(batch.map.clone()));
        let outs = self.model.forward(&mut g, &vars, lr, map)?;
        let images: Vec<_> = outs.iter().map(|o| o.image).collect();
        let loss = multistage_loss(&mut g, &images, &batch.hr, self.config.model.multistage)?;
        Ok(f64::from(g.value(loss)?.data()[0]))
    }

    /// One optimizer step on the batch for the next step index.
    pub fn step(&mut self, source: &dyn BatchSource) -> Result<StepRecord> {
        let step = self.step + 1;
        let batch = source.batch(step)?;
        let mut g = Graph::new();
        let vars = self.model.params().bind(&mut g);
        let (lr, map) = (g.constant(batch.lr), g.constant(batch.map));
        let outs = self.model.forward(&mut g, &vars, lr, map)?;
        let images: Vec<_> = outs.iter().map(|o| o.image).collect();
        let loss_var = multistage_loss(&mut g, &images, &batch.hr, self.config.model.multistage)?;
        let loss = f64::from(g.value(loss_var)?.data()[0]);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss {loss} at step {step}; batch seeds {:?}",
                batch.seeds
            )));
        }
        let mut grads = g.backward(loss_var)?;
        self.model.params_mut().store_grads(&mut grads, &vars)?;
        let rate = self.config.lr_at(step);
        self.adam.step(self.model.params_mut(), rate).map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("{m} at step {step}; batch seeds {:?}", batch.seeds)),
            other => other,
        })?;
        self.step = step;
        Ok(StepRecord { step, loss, lr: rate })
    }

    /// Trains until `total_steps`, writing checkpoints to `checkpoint` at
    /// the configured interval and at the end.
    pub fn run(
        &mut self,
        source: &dyn BatchSource,
        checkpoint: Option<&Path>,
        mut on_step: impl FnMut(&StepRecord) -> Result<()>,
    ) -> Result<Vec<StepRecord>> {
        let mut log = Vec::new();
        while self.step < self.config.total_steps {
            let rec = self.step(source)?;
            on_step(&rec)?;
            log.push(rec);
            let every = self.config.checkpoint_every;
            if let Some(path) = checkpoint {
                if every > 0 && rec.step % every == 0 && rec.step < self.config.total_steps {
                    self.save(path)?;
                }
            }
        }
        if let Some(path) = checkpoint {
            self.save(path)?;
        }
        Ok(log)
    }

    /// Writes parameters and optimizer moments to `path` and the
    /// configuration and step counter to `<path>.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries = self.model.to_entries();
        let (m, v) = self.adam.moments();
        for (p, (m, v)) in self.model.params().iter().zip(m.iter().zip(v)) {
            entries.push((format!("adam.m.{}", p.name), TenArray::from_tensor(m)));
            entries.push((format!("adam.v.{}", p.name), TenArray::from_tensor(v)));
        }
        write_checkpoint(path, &entries)?;
        let side = Sidecar {
            config: self.config.clone(),
            step: self.step,
        };
        let json = serde_json::to_string_pretty(&side)?;
        let sp = sidecar_path(path);
        std::fs::write(&sp, json).map_err(|e| Error::io(sp, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sp = sidecar_path(path);
        let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let side: Sidecar = serde_json::from_str(&text)?;
        let mut trainer = Self::new(side.config)?;
        let entries = read_checkpoint(path)?;
        trainer.model.load_entries(&entries)?;
        let lookup = |name: &str| -> Result<Tensor<f32>> {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?
                .1
                .to_tensor()
        };
        let names: Vec<String> = trainer.model.params().iter().map(|p| p.name.clone()).collect();
        let first = names.iter().map(|n| lookup(&format!("adam.m.{n}"))).collect::<Result<Vec<_>>>()?;
        let second = names.iter().map(|n| lookup(&format!("adam.v.{n}"))).collect::<Result<Vec<_>>>()?;
        trainer.adam.restore(side.step, first, second)?;
        trainer.step = side.step;
        Ok(trainer)
    }
}

/// Loads the model of a checkpoint written by [`Trainer::save`].
pub fn load_model(path: &Path) -> Result<Udvd<f32>> {
    let sp = sidecar_path(path);
    let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let side: Sidecar = serde_json::from_str(&text)?;
    let mut model = build_udvd(&side.config.model, 0)?;
    model.load_entries(&read_checkpoint(path)?)?;
    Ok(model)
}

/// Writes a `step,loss,lr` CSV.
pub fn write_log_csv(path: &Path, records: &[StepRecord], append: bool) -> Result<()> {
    use std::io::Write;
    let fresh = !append || !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut out = String::new();
    if fresh {
        out.push_str("step,loss,lr\n");
    }
    for r in records {
        out.push_str(&format!("{},{},{}\n", r.step, r.loss, r.lr));
    }
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Super-resolves `lr` given known degradation parameters. The result is
/// the final stage and is not clipped.
pub fn infer(model: &Udvd<f32>, lr: &Tensor<f32>, params: &DegradationParams, basis: &PcaBasis) -> Result<Tensor<f32>> {
    if params.scale() != model.config().scale {
        return Err(Error::Config(format!(
            "model upscales by {} but {} was requested",
            model.config().scale,
            params.scale()
        )));
    }
    let map = encode_degradation(&params.kernel(), params.noise_level(), basis, lr.h(), lr.w())?.into_tensor();
    let maps: Vec<Tensor<f32>> = (0..lr.n()).map(|_| map.clone()).collect();
    let mut outs = model.predict(lr, &Tensor::stack(&maps)?)?;
    Ok(outs.pop().expect("at least one stage"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            model: UdvdConfig::new(1, 8, "UD", 3, 2).unwrap(),
            batch: 2,
            lr0: 1e-3,
            halve_every: 3,
            total_steps: 6,
            patch_lr: 6,
            eps_range: (0.2, 3.0),
            sigma_range: (0.0, 75.0),
            seed: 4,
            checkpoint_every: 0,
        }
    }

    fn source(cfg: &TrainConfig) -> RandomPatches {
        let images = (0..3).map(|i| crate::synthetic::scene(20, 24, i)).collect();
        RandomPatches::new(images, PcaBasis::default_fit(), cfg).unwrap()
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::paper_default(2).unwrap();
        assert_eq!(cfg.lr_at(1), 1e-4);
        assert_eq!(cfg.lr_at(200_000), 1e-4);
        assert_eq!(cfg.lr_at(200_001), 5e-5);
        assert_eq!(cfg.lr_at(400_001), 2.5e-5);
        assert_eq!(cfg.patch_hr(), 96);
        assert_eq!(TrainConfig::paper_default(3).unwrap().patch_hr(), 144);
        assert_eq!(TrainConfig::paper_default(4).unwrap().patch_hr(), 192);
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = TrainConfig::desk_default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&text).unwrap(), cfg);
        let mut bad = cfg.clone();
        bad.eps_range = (2.0, 1.0);
        assert!(bad.validated().is_err());
    }

    #[test]
    fn training_is_reproducible_and_resumable() {
        let cfg = tiny_config();
        let src = source(&cfg);
        let mut a = Trainer::new(cfg.clone()).unwrap();
        let full = a.run(&src, None, |_| Ok(())).unwrap();
        assert_eq!(full.len(), 6);
        assert_eq!(full[3].lr, 5e-4);

        let mut b = Trainer::new(cfg.clone()).unwrap();
        let again = b.run(&src, None, |_| Ok(())).unwrap();
        assert_eq!(full, again);
        assert_eq!(a.model().params(), b.model().params());

        let dir = tempfile::tempdir().unwrap();
        let ck = dir.path().join("m.ckpt");
        let mut c = Trainer::new(TrainConfig { total_steps: 3, ..cfg.clone() }).unwrap();
        c.run(&src, Some(&ck), |_| Ok(())).unwrap();
        let mut d = Trainer::load(&ck).unwrap();
        assert_eq!(d.steps_done(), 3);
        d.set_total_steps(6);
        let tail = d.run(&src, None, |_| Ok(())).unwrap();
        assert_eq!(tail, full[3..]);
        assert_eq!(load_model(&ck).unwrap().params(), Trainer::load(&ck).unwrap().model().params());
    }

    #[test]
    fn non_finite_loss_reports_seeds() {
        let cfg = tiny_config();
        let src = source(&cfg);
        let mut t = Trainer::new(cfg).unwrap();
        t.model_mut().params_mut().get_mut(0).value.data_mut()[0] = f32::NAN;
        let err = t.step(&src).unwrap_err().to_string();
        assert!(err.contains("batch seeds"), "{err}");
        assert_eq!(t.steps_done(), 0);
    }

    #[test]
    fn infer_contract() {
        let cfg = tiny_config();
        let model = build_udvd(&cfg.model, 0).unwrap();
        let basis = PcaBasis::default_fit();
        let lr = crate::synthetic::scene(7, 9, 1);
        let p = DegradationParams::new(1.3, 15.0, 2).unwrap();
        let sr = infer(&model, &lr, &p, &basis).unwrap();
        assert_eq!(sr.shape(), [1, 3, 14, 18]);
        let map = encode_degradation(&p.kernel(), 15.0, &basis, 7, 9).unwrap().into_tensor();
        assert_eq!(&sr, model.predict(&lr, &map).unwrap().last().unwrap());
        let other = infer(&model, &lr, &DegradationParams::new(1.3, 40.0, 2).unwrap(), &basis).unwrap();
        assert!(sr.max_abs_diff(&other) > 0.0);
        assert!(infer(&model, &lr, &DegradationParams::new(1.3, 15.0, 3).unwrap(), &basis).is_err());
    }

    #[test]
    fn log_csv_header_and_append() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        let r = StepRecord { step: 1, loss: 0.5, lr: 1e-4 };
        write_log_csv(&p, &[r], false).unwrap();
        write_log_csv(&p, &[StepRecord { step: 2, ..r }], true).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "step,loss,lr\n1,0.5,0.0001\n2,0.5,0.0001\n");
    }
}
