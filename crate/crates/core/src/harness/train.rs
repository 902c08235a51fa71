use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{save_checkpoint, TrainState};
use crate::data::{batch_images, load_image, AnnotatedImage, AugmentConfig, WiderRecord};
use crate::error::{Error, Result};
use crate::loss::{LossBreakdown, LossConfig};
use crate::network::{detection_loss, Model};
use crate::tensor::{BnMode, Parameter, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Iterations at which the learning rate is multiplied by `lr_drop_factor`.
    pub lr_drops: Vec<usize>,
    pub lr_drop_factor: f64,
    /// Linear ramp from `lr0 / warmup_iters` up to `lr0` over the first
    /// iterations; 0 disables it.
    pub warmup_iters: usize,
    pub batch_size: usize,
    pub total_iters: usize,
    pub seed: u64,
    pub match_threshold: f64,
    pub loss: LossConfig,
    /// Write a checkpoint every this many iterations; 0 writes only the last.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    /// Desk-scale schedule: 2000 iterations of batch 8 from lr 0.02 after a
    /// 200-iteration warmup, with drops at 1000 and 1600.
    fn default() -> Self {
        TrainConfig {
            lr0: 0.02,
            momentum: 0.9,
            weight_decay: 1e-5,
            lr_drops: vec![1000, 1600],
            lr_drop_factor: 0.1,
            warmup_iters: 200,
            batch_size: 8,
            total_iters: 2000,
            seed: 0,
            match_threshold: 0.5,
            loss: LossConfig::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Full-scale schedule: lr 0.01 for 80000 iterations, drops at 40480 and
    /// 70000, batch 14.
    pub fn full_scale() -> Self {
        TrainConfig {
            lr0: 0.01,
            warmup_iters: 0,
            lr_drops: vec![40480, 70000],
            batch_size: 14,
            total_iters: 80000,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.lr0 > 0.0) {
            errs.push(format!("train.lr0 must be positive, got {}", self.lr0));
        }
        if !self.lr_drops.windows(2).all(|w| w[0] < w[1]) {
            errs.push("train.lr_drops must be strictly increasing".into());
        }
        if self.batch_size == 0 {
            errs.push("train.batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 || !(self.lr_drop_factor > 0.0) {
            errs.push("train: momentum in [0, 1), weight_decay >= 0, lr_drop_factor > 0".into());
        }
        if !(self.match_threshold > 0.0 && self.match_threshold < 1.0) {
            errs.push(format!("train.match_threshold must lie in (0, 1), got {}", self.match_threshold));
        }
        if !(self.loss.alpha >= 0.0 && self.loss.ohem_ratio >= 0.0) {
            errs.push("train.alpha and train.ohem_ratio must be non-negative".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

/// Step-decay schedule `lr0 · factor^(drops ≤ iter)`, scaled by
/// `(iter + 1) / warmup_iters` during warmup.
pub fn lr_at(iter: usize, cfg: &TrainConfig) -> f64 {
    let n = cfg.lr_drops.iter().filter(|&&d| d <= iter).count();
    let lr = cfg.lr0 * cfg.lr_drop_factor.powi(n as i32);
    if iter < cfg.warmup_iters {
        lr * (iter + 1) as f64 / cfg.warmup_iters as f64
    } else {
        lr
    }
}

/// SGD with momentum and coupled weight decay:
/// `v ← μ·v + (g + λ·w)`, `w ← w − lr·v`.
pub fn sgd_step(params: &mut [Parameter], grads: &[Tensor], cfg: &TrainConfig, iter: usize) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::dim(format!("{} parameters but {} gradients", params.len(), grads.len())));
    }
    for (p, g) in params.iter().zip(grads) {
        if g.dims() != p.value.dims() {
            return Err(Error::dim(format!(
                "{}: gradient {:?} vs parameter {:?}",
                p.name,
                g.dims(),
                p.value.dims()
            )));
        }
        if !g.all_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for {}", p.name)));
        }
    }
    let lr = lr_at(iter, cfg);
    let (mu, wd) = (cfg.momentum, cfg.weight_decay);
    for (p, g) in params.iter_mut().zip(grads) {
        let w = p.value.data_mut();
        let v = p.momentum.data_mut();
        for ((w, v), g) in w.iter_mut().zip(v.iter_mut()).zip(g.data()) {
            *v = mu * *v + (g + wd * *w);
            *w -= lr * *v;
        }
    }
    Ok(())
}

/// Random-access source of training images.
pub trait Dataset {
    fn len(&self) -> usize;
    fn get(&self, i: usize) -> Result<AnnotatedImage>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Dataset for [AnnotatedImage] {
    fn len(&self) -> usize {
        <[AnnotatedImage]>::len(self)
    }

    fn get(&self, i: usize) -> Result<AnnotatedImage> {
        self.get(i)
            .cloned()
            .ok_or_else(|| Error::Lookup(format!("image {i} of {}", <[AnnotatedImage]>::len(self))))
    }
}

impl Dataset for Vec<AnnotatedImage> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&self, i: usize) -> Result<AnnotatedImage> {
        Dataset::get(self.as_slice(), i)
    }
}

/// Annotated images read from disk on demand.
pub struct DiskDataset {
    pub root: std::path::PathBuf,
    pub records: Vec<WiderRecord>,
    pub channels: usize,
}

impl Dataset for DiskDataset {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn get(&self, i: usize) -> Result<AnnotatedImage> {
        let r = self
            .records
            .get(i)
            .ok_or_else(|| Error::Lookup(format!("image {i} of {}", self.records.len())))?;
        let image = load_image(&self.root.join(&r.path), self.channels)?;
        let mut item = AnnotatedImage::new(image, r.boxes.clone(), r.path.clone())?;
        item.clip_boxes();
        Ok(item)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub loss: LossBreakdown,
    pub lr: f64,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("iter,total,conf,loc,N,lr\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.iter, r.loss.total, r.loss.conf, r.loss.loc, r.loss.n_matched, r.lr
        ));
    }
    s
}

/// Trailing moving average of `window` values ending at `at` (inclusive).
pub fn smoothed(values: &[f64], at: usize, window: usize) -> f64 {
    let lo = (at + 1).saturating_sub(window);
    let s = &values[lo..=at];
    s.iter().sum::<f64>() / s.len() as f64
}

/// Shuffled pass over the dataset that reshuffles when exhausted.
struct Stream {
    order: Vec<usize>,
    pos: usize,
}

impl Stream {
    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// One optimizer step on a fixed batch; returns the loss before the update.
pub fn train_step(
    model: &mut Model,
    batch: &[AnnotatedImage],
    cfg: &TrainConfig,
    iter: usize,
) -> Result<LossBreakdown> {
    let images = batch_images(batch)?;
    let gts: Vec<_> = batch.iter().map(|a| a.boxes.clone()).collect();
    let mut ctx = model.begin(BnMode::Train);
    let x = ctx.tape.leaf(images, false);
    let outs = model.forward_detect(&mut ctx, x)?;
    let (loss, parts) = detection_loss(&mut ctx, &outs, &gts, cfg.match_threshold, &cfg.loss)?;
    ctx.tape.backward(loss)?;
    let grads = model.param_grads(&ctx);
    model.commit(&ctx);
    drop(ctx);
    sgd_step(&mut model.params, &grads, cfg, iter)?;
    Ok(parts)
}

/// Train for `cfg.total_iters` iterations, drawing augmented batches from
/// `data` with a generator seeded by `cfg.seed`. `on_row` sees every log row
/// as it is produced. With `out` set, checkpoints go there every
/// `checkpoint_every` iterations and after the last one. The final weights
/// are rounded to checkpoint precision.
pub fn train_loop<D: Dataset + ?Sized>(
    model: &mut Model,
    data: &D,
    cfg: &TrainConfig,
    augment: &AugmentConfig,
    out: Option<&Path>,
    on_row: &mut dyn FnMut(&LogRow),
) -> Result<Vec<LogRow>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    if augment.size != model.spec.input_size {
        return Err(Error::contract(format!(
            "augmentation resizes to {} but the network takes {}",
            augment.size, model.spec.input_size
        )));
    }
    crate::heap::retain_freed_memory();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stream = Stream {
        order: (0..data.len()).collect(),
        pos: data.len(),
    };
    let mut log = Vec::with_capacity(cfg.total_iters);
    for iter in 0..cfg.total_iters {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let item = data.get(stream.next(&mut rng))?;
            batch.push(augment.apply(&item, &mut rng));
        }
        let loss = train_step(model, &batch, cfg, iter)?;
        let row = LogRow {
            iter,
            loss,
            lr: lr_at(iter, cfg),
        };
        on_row(&row);
        log.push(row);
        let done = iter + 1;
        if done == cfg.total_iters {
            super::checkpoint::quantize(model);
        }
        if let Some(path) = out {
            let periodic = cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0;
            if periodic || done == cfg.total_iters {
                let state = TrainState {
                    iteration: done as u64,
                    rng: rng.clone(),
                };
                save_checkpoint(model, &state, path)?;
            }
        }
    }
    if cfg.total_iters == 0 {
        super::checkpoint::quantize(model);
    }
    Ok(log)
}
