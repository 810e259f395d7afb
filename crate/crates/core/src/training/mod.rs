//! Optimization of the concealing/revealing network.

pub mod checkpoint;
mod loss;
mod objective;
mod optim;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint, RngState};
pub use loss::{loss_freq, loss_hiding, loss_crev, loss_srev, loss_total, LossBreakdown, LossWeights};
pub use objective::{objective, objective_and_gradient, StepInputs};
pub use optim::Adam;

use crate::data::{load_images, random_crop};
use crate::error::{Error, Result};
use crate::inn::{init_model, InnModel, ModelConfig};
use crate::pipeline::gaussian_like;
use crate::tensor::{Image, Tensor};
use crate::wavelet::BANDS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Images per step; split into covers (first half) and secrets.
    pub batch_size: usize,
    pub epochs: usize,
    pub crop_size: usize,
    pub loss_weights: LossWeights,
    pub seed: u64,
    pub model: ModelConfig,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    /// Sample λ ~ U[0, 1] per pair; when false λ is fixed at 0.
    pub residual_augmentation: bool,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    /// Write a numbered checkpoint every this many epochs (0 disables them;
    /// the rolling `latest` checkpoint is always written).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-5,
            batch_size: 8,
            epochs: 50,
            crop_size: 224,
            loss_weights: LossWeights::default(),
            seed: 0,
            model: ModelConfig::default(),
            betas: (0.9, 0.999),
            weight_decay: 0.0,
            residual_augmentation: true,
            max_steps: None,
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    /// Desk-scale profile: small network, 32×32 crops, a larger step size.
    pub fn toy() -> Self {
        Self {
            learning_rate: 1e-3,
            crop_size: 32,
            model: ModelConfig::toy(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::Config(format!("batch_size must be even and positive, got {}", self.batch_size)));
        }
        if self.crop_size == 0 || !self.crop_size.is_multiple_of(2) {
            return Err(Error::Config(format!("crop_size must be even and positive, got {}", self.crop_size)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.loss_weights.as_array().iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss_weights must be finite and non-negative".into()));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config(format!("betas must lie in [0, 1), got ({b1}, {b2})")));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// One optimizer step worth of pairs.
#[derive(Clone, Debug)]
pub struct TrainBatch {
    pub covers: Vec<Image>,
    pub secrets: Vec<Image>,
    pub lams: Vec<f64>,
}

impl TrainBatch {
    /// Pair the first half of `images` (covers) with the second half
    /// (secrets).
    pub fn from_halves<R: Rng>(mut images: Vec<Image>, residual_augmentation: bool, rng: &mut R) -> Result<Self> {
        if images.is_empty() || !images.len().is_multiple_of(2) {
            return Err(Error::Dimension(format!("need an even, non-zero number of images, got {}", images.len())));
        }
        let secrets = images.split_off(images.len() / 2);
        let lams = (0..secrets.len())
            .map(|_| if residual_augmentation { rng.gen::<f64>() } else { 0.0 })
            .collect();
        Ok(Self { covers: images, secrets, lams })
    }

    pub fn len(&self) -> usize {
        self.covers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covers.is_empty()
    }

    fn validate(&self, crop_size: Option<usize>) -> Result<()> {
        if self.covers.len() != self.secrets.len() || self.covers.len() != self.lams.len() {
            return Err(Error::Dimension("covers, secrets and lambdas must have equal length".into()));
        }
        if self.is_empty() {
            return Err(Error::Dimension("empty batch".into()));
        }
        if let Some(size) = crop_size {
            if let Some(bad) = self.covers.iter().chain(&self.secrets).find(|i| i.height() != size || i.width() != size) {
                return Err(Error::Dimension(format!(
                    "batch image is {}×{}, expected {size}×{size}",
                    bad.height(),
                    bad.width()
                )));
            }
        }
        Ok(())
    }
}

/// Sample noise, differentiate the objective and apply one optimizer update.
pub fn train_step<R: Rng>(
    model: &mut InnModel,
    optimizer: &mut Adam,
    batch: &TrainBatch,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<LossBreakdown> {
    batch.validate(Some(cfg.crop_size))?;
    let covers = Tensor::from_images(&batch.covers.iter().collect::<Vec<_>>())?;
    let secrets = Tensor::from_images(&batch.secrets.iter().collect::<Vec<_>>())?;
    let [c, n, h, w] = covers.shape();
    let sub = [BANDS * c, n, h / 2, w / 2];
    let noise_secret = gaussian_like(sub, rng);
    let noise_cover = gaussian_like(sub, rng);
    let inputs = StepInputs { secrets, covers, lams: batch.lams.clone(), noise_secret, noise_cover };
    let (losses, grad) = objective_and_gradient(model, &inputs, &cfg.loss_weights)?;
    if !losses.is_finite() {
        return Err(Error::NonFinite(format!("training loss diverged: {losses:?}")));
    }
    optimizer.update(model, &grad);
    if !model.all_finite() {
        return Err(Error::NonFinite("parameters became non-finite after the update".into()));
    }
    Ok(losses)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: LossBreakdown,
}

/// Where a training run writes its artifacts.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub dir: PathBuf,
}

impl TrainOutput {
    pub fn latest(&self) -> PathBuf {
        self.dir.join("latest.ckpt")
    }

    pub fn epoch(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("epoch_{epoch:04}.ckpt"))
    }

    pub fn loss_log(&self) -> PathBuf {
        self.dir.join("loss.csv")
    }
}

/// Model, optimizer and random stream of a training run.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: InnModel,
    pub optimizer: Adam,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    pub step: usize,
    pub history: Vec<LossRecord>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = init_model(&config.model, &mut rng)?;
        let optimizer = Adam::new(&model, config.learning_rate, config.betas, config.weight_decay);
        Ok(Self { config, model, optimizer, rng, epoch: 0, step: 0, history: Vec::new() })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        let optimizer = match ckpt.optimizer {
            Some(opt) => opt,
            None => Adam::new(&ckpt.model, ckpt.config.learning_rate, ckpt.config.betas, ckpt.config.weight_decay),
        };
        let rng = match &ckpt.rng {
            Some(state) => state.restore()?,
            None => ChaCha8Rng::seed_from_u64(ckpt.config.seed),
        };
        Ok(Self {
            config: ckpt.config,
            model: ckpt.model,
            optimizer,
            rng,
            epoch: ckpt.epoch,
            step: ckpt.step,
            history: Vec::new(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: Some(self.optimizer.clone()),
            config: self.config.clone(),
            epoch: self.epoch,
            step: self.step,
            rng: Some(RngState::capture(&self.rng)),
        }
    }

    fn done(&self) -> bool {
        self.epoch >= self.config.epochs || self.config.max_steps.is_some_and(|m| self.step >= m)
    }

    /// One pass over `images` in a freshly shuffled order. A trailing partial
    /// batch is dropped.
    pub fn run_epoch(&mut self, images: &[Image]) -> Result<Vec<LossRecord>> {
        let bs = self.config.batch_size;
        if images.len() < bs {
            return Err(Error::Data(format!("need at least {bs} images, got {}", images.len())));
        }
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.shuffle(&mut self.rng);
        let mut records = Vec::new();
        for chunk in order.chunks_exact(bs) {
            if self.config.max_steps.is_some_and(|m| self.step >= m) {
                break;
            }
            let crops = chunk
                .iter()
                .map(|&i| random_crop(&images[i], self.config.crop_size, &mut self.rng))
                .collect::<Result<Vec<_>>>()?;
            let batch = TrainBatch::from_halves(crops, self.config.residual_augmentation, &mut self.rng)?;
            let losses = train_step(&mut self.model, &mut self.optimizer, &batch, &self.config, &mut self.rng)?;
            self.step += 1;
            records.push(LossRecord { step: self.step, epoch: self.epoch + 1, losses });
        }
        self.epoch += 1;
        self.history.extend_from_slice(&records);
        Ok(records)
    }

    /// Train until the epoch (or step) budget is spent. With `output`, the
    /// loss log is appended per step and checkpoints are written per epoch.
    pub fn fit(&mut self, images: &[Image], output: Option<&TrainOutput>) -> Result<()> {
        let mut log = match output {
            Some(out) => {
                fs::create_dir_all(&out.dir)?;
                Some(LossLog::create(&out.loss_log())?)
            }
            None => None,
        };
        while !self.done() {
            let records = self.run_epoch(images)?;
            if let Some(log) = log.as_mut() {
                log.append(&records)?;
            }
            if let Some(last) = records.last() {
                let mean = records.iter().map(|r| r.losses.l_total).sum::<f64>() / records.len() as f64;
                info!(
                    "epoch {} step {} mean loss {mean:.6} (last: hid {:.2e} freq {:.2e} srev {:.2e} crev {:.2e})",
                    self.epoch, last.step, last.losses.l_hid, last.losses.l_freq, last.losses.l_srev, last.losses.l_crev
                );
            }
            if let Some(out) = output {
                let ckpt = self.checkpoint();
                save_checkpoint(&ckpt, &out.latest())?;
                if self.config.checkpoint_every > 0 && self.epoch.is_multiple_of(self.config.checkpoint_every) {
                    save_checkpoint(&ckpt, &out.epoch(self.epoch))?;
                }
            }
        }
        Ok(())
    }
}

/// Per-step CSV log: `step,epoch,l_hid,l_freq,l_srev,l_crev,l_total`.
pub struct LossLog {
    file: fs::File,
}

impl LossLog {
    pub const HEADER: &'static str = "step,epoch,l_hid,l_freq,l_srev,l_crev,l_total";

    pub fn create(path: &Path) -> Result<Self> {
        let mut file = fs::File::create(path)?;
        writeln!(file, "{}", Self::HEADER)?;
        Ok(Self { file })
    }

    pub fn append(&mut self, records: &[LossRecord]) -> Result<()> {
        for r in records {
            let l = &r.losses;
            writeln!(
                self.file,
                "{},{},{:e},{:e},{:e},{:e},{:e}",
                r.step, r.epoch, l.l_hid, l.l_freq, l.l_srev, l.l_crev, l.l_total
            )?;
        }
        self.file.flush()?;
        Ok(())
    }
}

/// Train on every decodable image in `dataset_dir`.
pub fn train(dataset_dir: &Path, cfg: &TrainConfig, output: Option<&TrainOutput>) -> Result<Checkpoint> {
    cfg.validate()?;
    let images = load_images(dataset_dir)?;
    let usable: Vec<Image> = images
        .into_iter()
        .filter(|img| img.height() >= cfg.crop_size && img.width() >= cfg.crop_size)
        .collect();
    if usable.len() < cfg.batch_size {
        return Err(Error::Data(format!(
            "{} holds {} images of at least {}×{}, need {}",
            dataset_dir.display(),
            usable.len(),
            cfg.crop_size,
            cfg.crop_size,
            cfg.batch_size
        )));
    }
    let mut trainer = Trainer::new(cfg.clone())?;
    trainer.fit(&usable, output)?;
    Ok(trainer.checkpoint())
}
