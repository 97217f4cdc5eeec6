//! Mini-batch training: rollout MSE, Adam, plateau learning-rate decay and
//! checkpointing.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clips::{Clip, ClipSource};
use crate::encode::{Colormap, Planes, Ranges};
use crate::error::{Error, Result};
use crate::forecast::{forecast_clip, record_clip, RolloutConfig};
use crate::nn::{Checkpoint, Gradients, Model, NetworkConfig, Params, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    /// Minimum decrease of the best validation loss that counts as progress.
    pub plateau_threshold: f64,
    pub teacher_forcing_p: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 3,
            lr: 1e-3,
            epochs: 50,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            plateau_factor: 0.5,
            plateau_patience: 3,
            min_lr: 1e-5,
            plateau_threshold: 1e-6,
            teacher_forcing_p: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        // written negated so NaN is rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.lr > 0.0) {
            return Err(Error::invalid("lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.plateau_factor) {
            return Err(Error::invalid("plateau_factor must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing_p) {
            return Err(Error::invalid("teacher_forcing_p outside [0, 1]"));
        }
        if self.min_lr < 0.0 {
            return Err(Error::invalid("min_lr must be >= 0"));
        }
        Ok(())
    }
}

/// Mean squared error over every entry of the predicted frames.
pub fn loss(pred: &[Planes], target: &[Planes]) -> Result<f64> {
    if pred.len() != target.len() || pred.iter().zip(target).any(|(p, t)| p.data.len() != t.data.len()) {
        return Err(Error::Shape("prediction and target shapes differ".into()));
    }
    let n: usize = pred.iter().map(|p| p.data.len()).sum();
    let sum: f64 = pred
        .iter()
        .zip(target)
        .flat_map(|(p, t)| p.data.iter().zip(&t.data))
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    Ok(sum / n as f64)
}

/// MSE of raw predictions against target planes plus its gradient
/// w.r.t. each prediction.
fn mse_with_grad<T: Scalar>(preds: &[Vec<T>], target: &[Planes]) -> (f64, Vec<Vec<T>>) {
    let n: usize = preds.iter().map(|p| p.len()).sum();
    let scale = T::from_f64(2.0 / n as f64);
    let mut sum = 0.0;
    let grads = preds
        .iter()
        .zip(target)
        .map(|(p, t)| {
            p.iter()
                .zip(&t.data)
                .map(|(&a, &b)| {
                    let d = a - T::from_f32(b);
                    sum += d.to_f64() * d.to_f64();
                    scale * d
                })
                .collect()
        })
        .collect();
    (sum / n as f64, grads)
}

/// Loss and parameter gradients for one clip.
pub fn clip_loss_and_grads<T: Scalar>(
    model: &Model<T>,
    clip: &Clip,
    rollout: &RolloutConfig,
    dropout: Option<&mut dyn rand::RngCore>,
) -> Result<(f64, Gradients<T>)> {
    let rec = record_clip(model, clip, rollout, dropout)?;
    let (loss, dpred) = mse_with_grad(&rec.predictions, &clip.target[..rollout.horizon]);
    let mut out_grads: Vec<Option<Vec<T>>> = vec![None; rec.tape.len()];
    for (step, g) in rec.prediction_steps.iter().zip(dpred) {
        out_grads[*step] = Some(g);
    }
    let grads = model.backward(&rec.tape, &out_grads)?;
    Ok((loss, grads))
}

/// Adam moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Params<T>,
    pub v: Params<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &Params<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Scalar>(
    params: &mut Params<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    state.step += 1;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
    let (ib1, ib2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
    let (c1, c2) = (T::from_f64(1.0 / bc1), T::from_f64(1.0 / bc2));
    let (lr, eps) = (T::from_f64(lr), T::from_f64(eps));
    let bufs = params
        .buffers_mut()
        .into_iter()
        .zip(grads.buffers())
        .zip(state.m.buffers_mut().into_iter().zip(state.v.buffers_mut()));
    for ((p, g), (m, v)) in bufs {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + ib1 * g[i];
            v[i] = b2 * v[i] + ib2 * g[i] * g[i];
            let mh = m[i] * c1;
            let vh = v[i] * c2;
            p[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

/// Reduce-on-plateau learning-rate schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub threshold: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, min_lr: f64, threshold: f64) -> Self {
        PlateauScheduler {
            factor,
            patience,
            min_lr,
            threshold,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr, cfg.plateau_threshold)
    }

    /// Records one epoch's validation loss and returns the learning rate
    /// for the next epoch.
    pub fn observe(&mut self, val_loss: f64, lr: f64) -> f64 {
        if val_loss < self.best - self.threshold {
            self.best = val_loss;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

/// Replays `val_losses` through a fresh scheduler.
pub fn plateau_scheduler(val_losses: &[f64], lr: f64, factor: f64, patience: usize, min_lr: f64) -> f64 {
    let mut s = PlateauScheduler::new(factor, patience, min_lr, 1e-6);
    val_losses.iter().fold(lr, |lr, &l| s.observe(l, lr))
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over the combined words
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Model plus optimiser state.
pub struct Trainer {
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    pub cfg: TrainConfig,
    pub lr: f64,
}

impl Trainer {
    pub fn new(network: NetworkConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Model::init(network, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
        Ok(Self::from_model(model, cfg))
    }

    pub fn from_model(model: Model<f32>, cfg: TrainConfig) -> Self {
        let adam = AdamState::new(&model.params);
        let lr = cfg.lr;
        Trainer { model, adam, cfg, lr }
    }

    /// Mean loss and gradient over `batch`. Items run in parallel; gradients
    /// are summed in batch order.
    pub fn batch_gradients(&self, batch: &[(&Clip, u64)]) -> Result<(f64, Gradients<f32>)> {
        let tf = self.cfg.teacher_forcing_p;
        let results: Vec<Result<(f64, Gradients<f32>)>> = batch
            .par_iter()
            .map(|(clip, key)| {
                let rollout = RolloutConfig {
                    teacher_forcing_p: tf,
                    rng_seed: *key,
                    ..RolloutConfig::default()
                };
                let mut dropout = ChaCha8Rng::seed_from_u64(key.wrapping_add(1));
                clip_loss_and_grads(&self.model, clip, &rollout, Some(&mut dropout))
            })
            .collect();
        let mut total = 0.0;
        let mut sum = self.model.params.zeros_like();
        for r in results {
            let (l, g) = r?;
            if !l.is_finite() {
                return Err(Error::NonFinite("training loss".into()));
            }
            total += l;
            sum.add_assign(&g);
        }
        let n = batch.len() as f64;
        sum.scale(1.0 / n as f32);
        Ok((total / n, sum))
    }

    /// One optimiser step; returns the batch loss before the update.
    pub fn step(&mut self, batch: &[(&Clip, u64)]) -> Result<f64> {
        let (loss, grads) = self.batch_gradients(batch)?;
        adam_step(
            &mut self.model.params,
            &grads,
            &mut self.adam,
            self.lr,
            self.cfg.beta1,
            self.cfg.beta2,
            self.cfg.eps,
        )?;
        Ok(loss)
    }
}

/// Mean pure-rollout MSE (dropout and teacher forcing off).
pub fn evaluate_loss(model: &Model<f32>, source: &dyn ClipSource, indices: &[usize]) -> Result<f64> {
    let losses: Vec<Result<f64>> = indices
        .par_iter()
        .map(|&i| {
            let clip = source.load(i)?;
            loss(&forecast_clip(model, &clip)?, &clip.target)
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / indices.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<EpochRecord>,
}

/// Where the loop writes its artefacts; `None` keeps everything in memory.
pub struct RunOutput<'a> {
    pub dir: &'a Path,
}

pub fn write_epoch_log(log: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("epoch,train_loss,val_loss,lr,wall_seconds\n");
    for r in log {
        text.push_str(&format!(
            "{},{},{},{},{:.3}\n",
            r.epoch, r.train_loss, r.val_loss, r.lr, r.wall_seconds
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Full training run over `train` clip indices, validating on `val`.
#[allow(clippy::too_many_arguments)]
pub fn train_loop(
    source: &dyn ClipSource,
    train: &[usize],
    val: &[usize],
    network: NetworkConfig,
    ranges: Ranges,
    colormap: Colormap,
    cfg: &TrainConfig,
    out: Option<RunOutput<'_>>,
) -> Result<TrainOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid(format!(
            "need non-empty train and validation sets ({} / {} clips)",
            train.len(),
            val.len()
        )));
    }
    let mut trainer = Trainer::new(network, cfg.clone())?;
    let snapshot = |m: &Model<f32>| Checkpoint {
        model: m.clone(),
        ranges,
        colormap: colormap.clone(),
    };
    let mut best = snapshot(&trainer.model);
    let mut best_val = f64::INFINITY;
    let mut scheduler = PlateauScheduler::from_config(cfg);
    let mut log = Vec::with_capacity(cfg.epochs);
    let save = |name: &str, ck: &Checkpoint| -> Result<()> {
        if let Some(o) = &out {
            crate::nn::save_checkpoint(ck, o.dir.join(name))?;
        }
        Ok(())
    };

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order = train.to_vec();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64)));
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let clips = chunk
                .iter()
                .map(|&i| source.load(i))
                .collect::<Result<Vec<_>>>()?;
            let batch: Vec<(&Clip, u64)> = clips
                .iter()
                .zip(chunk)
                .map(|(c, &i)| (c.as_ref(), mix_seed(cfg.seed, epoch as u64, i as u64)))
                .collect();
            sum += trainer.step(&batch)? * chunk.len() as f64;
            log::debug!("epoch {epoch} batch {b}");
        }
        let train_loss = sum / order.len() as f64;
        let val_loss = evaluate_loss(&trainer.model, source, val)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite("validation loss".into()));
        }
        let lr_used = trainer.lr;
        trainer.lr = scheduler.observe(val_loss, trainer.lr);
        log.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: lr_used,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} lr {lr_used:e}");
        if val_loss < best_val {
            best_val = val_loss;
            best = snapshot(&trainer.model);
            save("best.ckpt", &best)?;
        }
        save("last.ckpt", &snapshot(&trainer.model))?;
        if let Some(o) = &out {
            write_epoch_log(&log, o.dir.join("epochs.csv"))?;
        }
    }

    let last = snapshot(&trainer.model);
    if cfg.epochs == 0 {
        save("best.ckpt", &best)?;
        save("last.ckpt", &last)?;
        if let Some(o) = &out {
            write_epoch_log(&log, o.dir.join("epochs.csv"))?;
        }
    }
    Ok(TrainOutcome { best, last, log })
}

/// Writes `text` to `path`, creating parent directories.
pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
