//! Optimization loop: cosine schedule, AdamW, patch sampling, checkpoints.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retinexdual_autograd::{Graph, Tensor};
use serde::Serialize;

use crate::checkpoint;
use crate::config::{RunConfig, TrainConfig};
use crate::data::PairedSample;
use crate::error::{Error, Result};
use crate::image::{stack, ImageTensor};
use crate::metrics;
use crate::objectives::{total_loss, Extractor, LossReport};
use crate::params::{Ctx, ParamStore};
use crate::retinex::RetinexDual;

/// `lr_final + ½(lr_init − lr_final)(1 + cos(π t / max_steps))`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> Result<f64> {
    if step > cfg.max_steps {
        return Err(Error::config("train.max_steps", format!("step {step} is beyond max_steps {}", cfg.max_steps)));
    }
    let progress = step as f64 / cfg.max_steps as f64;
    Ok(cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, Default)]
pub struct AdamW {
    m: BTreeMap<String, Tensor<f32>>,
    v: BTreeMap<String, Tensor<f32>>,
    t: u32,
}

impl AdamW {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    /// Clip `grads` to global norm `cfg.grad_clip`, then update `store`.
    /// Returns the pre-clip gradient norm.
    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &BTreeMap<String, Tensor<f32>>, lr: f64, cfg: &TrainConfig) -> f64 {
        let norm = grads.values().flat_map(|g| g.data()).map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        let clip = if norm > cfg.grad_clip { cfg.grad_clip / norm } else { 1.0 };
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (name, p) in store.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            let decay = (1.0 - lr * cfg.weight_decay) as f32;
            for (((pv, &gv), mv), vv) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut()).zip(v.data_mut().iter_mut())
            {
                let gv = gv as f64 * clip;
                let mn = b1 * *mv as f64 + (1.0 - b1) * gv;
                let vn = b2 * *vv as f64 + (1.0 - b2) * gv * gv;
                *mv = mn as f32;
                *vv = vn as f32;
                let update = lr * (mn / bc1) / ((vn / bc2).sqrt() + cfg.adam_eps);
                *pv = *pv * decay - update as f32;
            }
        }
        norm
    }
}

/// Random crops with optional horizontal flips.
pub struct PatchSampler {
    rng: ChaCha8Rng,
    patch: usize,
    hflip: bool,
}

impl PatchSampler {
    pub fn new(seed: u64, patch: usize, hflip: bool) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE), patch, hflip }
    }

    pub fn sample(&mut self, data: &[PairedSample]) -> Result<(ImageTensor, ImageTensor)> {
        if data.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let s = &data[self.rng.random_range(0..data.len())];
        let (h, w, p) = (s.clean.height(), s.clean.width(), self.patch);
        if h < p || w < p {
            return Err(Error::Data(format!("{} is {h}x{w}, smaller than the {p}x{p} patch", s.identifier)));
        }
        let (y, x) = (self.rng.random_range(0..=h - p), self.rng.random_range(0..=w - p));
        let (mut d, mut c) = (s.degraded.crop(y, x, p, p)?, s.clean.crop(y, x, p, p)?);
        if self.hflip && self.rng.random_bool(0.5) {
            d = d.flip_horizontal();
            c = c.flip_horizontal();
        }
        Ok((d, c))
    }

    pub fn batch(&mut self, data: &[PairedSample], n: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let pairs = (0..n).map(|_| self.sample(data)).collect::<Result<Vec<_>>>()?;
        let d: Vec<&ImageTensor> = pairs.iter().map(|p| &p.0).collect();
        let c: Vec<&ImageTensor> = pairs.iter().map(|p| &p.1).collect();
        Ok((stack(&d)?, stack(&c)?))
    }
}

/// One log line.
#[derive(Clone, Debug, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub terms: BTreeMap<&'static str, f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValRecord {
    pub step: usize,
    pub val_psnr: f64,
    pub val_ssim: f64,
}

/// Model, weights, optimizer state and the fixed loss extractor.
pub struct Trainer {
    pub config: RunConfig,
    pub model: RetinexDual,
    pub store: ParamStore<f32>,
    pub optimizer: AdamW,
    pub extractor: Extractor,
    pub step: usize,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let model = RetinexDual::new(&config.model);
        let store = model.init(config.train.seed);
        Self::with_store(config, store)
    }

    pub fn with_store(config: RunConfig, store: ParamStore<f32>) -> Result<Self> {
        let model = RetinexDual::new(&config.model);
        model.check_store(&store)?;
        let extractor = Extractor::from_config(&config.loss)?;
        Ok(Self { config, model, store, optimizer: AdamW::new(), extractor, step: 0 })
    }

    /// Forward, objective, backward and one optimizer update on a batch.
    pub fn train_step(&mut self, degraded: &Tensor<f32>, clean: &Tensor<f32>) -> Result<(LossReport, StepRecord)> {
        let lr = lr_at(self.step.min(self.config.train.max_steps), &self.config.train)?;
        let graph = Graph::new();
        let noise_seed = self.config.train.seed.wrapping_mul(0x9E37_79B9).wrapping_add(self.step as u64);
        let ctx = Ctx::train(&graph, &self.store, noise_seed);
        let x = graph.constant(degraded.clone());
        let gt = graph.constant(clean.clone());
        let fwd = self.model.forward(&ctx, &x)?;
        let (loss, report) = total_loss(&fwd.pyramid, &gt, &self.config.loss, &self.extractor)?;
        if !report.total.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.step, breakdown: report.breakdown() });
        }
        let grads = ctx.param_grads(&graph.backward(&loss));
        drop(ctx);
        if grads.values().any(|g| !g.all_finite()) {
            return Err(Error::NonFiniteLoss { step: self.step, breakdown: "non-finite gradient".into() });
        }
        let grad_norm = self.optimizer.step(&mut self.store, &grads, lr, &self.config.train);
        let mut terms = BTreeMap::new();
        for (i, name) in crate::objectives::TERM_NAMES.iter().enumerate() {
            if report.active_terms().contains(name) {
                terms.insert(*name, report.contribution(i));
            }
        }
        let record = StepRecord { step: self.step, lr, loss: report.total, grad_norm, terms };
        self.step += 1;
        Ok((report, record))
    }

    /// Mean PSNR and SSIM of restored versus clean over `data`.
    pub fn evaluate(&self, data: &[PairedSample]) -> Result<(f64, f64)> {
        evaluate(&self.model, &self.store, data)
    }
}

pub fn evaluate(model: &RetinexDual, store: &ParamStore<f32>, data: &[PairedSample]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let (mut p, mut s) = (0.0, 0.0);
    for sample in data {
        let out = model.restore(store, &sample.degraded)?;
        p += metrics::psnr_images(&out.final_image, &sample.clean)?;
        s += metrics::ssim_metric(&out.final_image, &sample.clean)?;
    }
    Ok((p / data.len() as f64, s / data.len() as f64))
}

/// Where [`fit`] writes its outputs.
#[derive(Clone, Debug)]
pub struct FitOutputs {
    pub dir: PathBuf,
}

impl FitOutputs {
    pub fn last(&self) -> PathBuf {
        self.dir.join("last.ckpt")
    }
    pub fn best(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }
    pub fn log(&self) -> PathBuf {
        self.dir.join("train.log")
    }
}

#[derive(Debug)]
pub struct FitSummary {
    pub trainer: Trainer,
    pub records: Vec<StepRecord>,
    pub best_val_psnr: Option<f64>,
}

fn json_line(w: &mut dyn Write, value: &impl Serialize, path: &Path) -> Result<()> {
    let line = serde_json::to_string(value).expect("records serialize");
    writeln!(w, "{line}").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Train for `train.max_steps` on `train_set`, validating on `val_set` every
/// `train.val_every` steps and at the end. With `out`, writes `train.log`
/// (JSON lines), `last.ckpt` and `best.ckpt` (highest validation PSNR).
pub fn fit(config: RunConfig, train_set: &[PairedSample], val_set: &[PairedSample], out: Option<&FitOutputs>) -> Result<FitSummary> {
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut trainer = Trainer::new(config)?;
    let tc = trainer.config.train.clone();
    let mut sampler = PatchSampler::new(tc.seed, tc.patch, tc.hflip);
    let mut log: Box<dyn Write> = match out {
        Some(o) => {
            std::fs::create_dir_all(&o.dir).map_err(|e| Error::io(format!("creating {}", o.dir.display()), e))?;
            let f = std::fs::File::create(o.log()).map_err(|e| Error::io(format!("creating {}", o.log().display()), e))?;
            Box::new(std::io::BufWriter::new(f))
        }
        None => Box::new(std::io::sink()),
    };
    let log_path = out.map(FitOutputs::log).unwrap_or_default();
    let mut records = Vec::with_capacity(tc.max_steps);
    let mut best: Option<f64> = None;
    for step in 0..tc.max_steps {
        let (d, c) = sampler.batch(train_set, tc.batch)?;
        let (_, record) = trainer.train_step(&d, &c)?;
        json_line(&mut log, &record, &log_path)?;
        records.push(record);
        let done = step + 1 == tc.max_steps;
        let validate = !val_set.is_empty() && ((tc.val_every > 0 && (step + 1) % tc.val_every == 0) || done);
        if validate {
            let (val_psnr, val_ssim) = trainer.evaluate(val_set)?;
            json_line(&mut log, &ValRecord { step: step + 1, val_psnr, val_ssim }, &log_path)?;
            if best.is_none_or(|b| val_psnr > b) {
                best = Some(val_psnr);
                if let Some(o) = out {
                    checkpoint::save(&o.best(), &trainer.config, &trainer.store)?;
                }
            }
        }
    }
    log.flush().map_err(|e| Error::io("flushing training log", e))?;
    if let Some(o) = out {
        checkpoint::save(&o.last(), &trainer.config, &trainer.store)?;
        if best.is_none() {
            checkpoint::save(&o.best(), &trainer.config, &trainer.store)?;
        }
    }
    Ok(FitSummary { trainer, records, best_val_psnr: best })
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer").field("step", &self.step).field("params", &self.store.count()).finish()
    }
}
