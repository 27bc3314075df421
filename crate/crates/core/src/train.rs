//! SGD with momentum, the three-phase weight-decay schedule, rotation
//! augmentation and the stratified holdout split.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DatasetSplit;
use crate::error::{config_err, Error, Result};
use crate::net::{argmax, softmax_log_loss, Mode, Network, NetworkParams, Normalization, PoolGrid};
use crate::rotation::{bicubic_sample, exact_trig, source_offset};
use crate::rotconv::Arch;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    pub learning_rate: f64,
    pub momentum: f64,
    pub dropout_rate: f64,
    pub weight_decay_phase2: f64,
    pub phase2_epochs: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Rotations per group (`R`); forced to 1 for the standard arch.
    pub orientations: usize,
    /// Rotation groups (`M`), or plain filters for the standard arch.
    pub groups: usize,
    pub size: usize,
    pub crop: usize,
    pub grid: PoolGrid,
    pub augment_rotations: bool,
    pub init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Arch::Rotatable,
            learning_rate: 1e-4,
            momentum: 0.9,
            dropout_rate: 0.2,
            weight_decay_phase2: 0.1,
            phase2_epochs: 100,
            batch_size: 24,
            max_epochs: 2000,
            patience: 20,
            seed: 0,
            orientations: 32,
            groups: 16,
            size: 35,
            crop: 88,
            grid: PoolGrid::new(2, 2),
            augment_rotations: false,
            init_std: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(config_err!("dropout rate must be in [0, 1)"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(config_err!("learning rate must be positive"));
        }
        if self.crop < self.size {
            return Err(config_err!(
                "crop {} smaller than filter size {}",
                self.crop,
                self.size
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(config_err!("batch size and max epochs must be positive"));
        }
        Ok(())
    }

    pub fn effective_orientations(&self) -> usize {
        match self.arch {
            Arch::Rotatable => self.orientations,
            Arch::Standard => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// `v <- momentum v - lr (g + decay p); p <- p + v`. Biases never decay.
pub fn sgd_update(
    param: &mut [f64],
    grad: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    decay: f64,
    kind: ParamKind,
) {
    let decay = match kind {
        ParamKind::Weight => decay,
        ParamKind::Bias => 0.0,
    };
    for ((p, g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * (g + decay * *p);
        *p += *v;
    }
}

/// Rotates `image` by `angle` about the center of its central `crop × crop`
/// window (bicubic) and returns that window.
pub fn augment_rotate_crop(image: &Tensor, angle: f64, crop: usize) -> Result<Tensor> {
    let (h, w) = image.dims2()?;
    if crop == 0 || crop > h || crop > w {
        return Err(config_err!("crop {} does not fit a {}x{} image", crop, h, w));
    }
    let (r0, c0) = ((h - crop) / 2, (w - crop) / 2);
    let half = (crop as f64 - 1.0) / 2.0;
    let (cy, cx) = (r0 as f64 + half, c0 as f64 + half);
    let (cos, sin) = exact_trig(angle);
    for (dx, dy) in [(-half, -half), (half, -half), (-half, half), (half, half)] {
        let (sx, sy) = source_offset(dx, dy, cos, sin);
        let (x, y) = (cx + sx, cy + sy);
        let eps = 1e-9;
        if x < -eps || y < -eps || x > (w - 1) as f64 + eps || y > (h - 1) as f64 + eps {
            return Err(config_err!(
                "a {}x{} crop rotated by {:.4} rad leaves the {}x{} image",
                crop,
                crop,
                angle,
                h,
                w
            ));
        }
    }
    Ok(Tensor::from_fn(crop, crop, |i, j| {
        let (sx, sy) = source_offset(j as f64 - half, i as f64 - half, cos, sin);
        bicubic_sample(image, cx + sx, cy + sy)
    }))
}

/// Stratified random split; each class sends `ceil(fraction · count)` (at
/// least one) samples to validation and keeps at least one for training.
pub fn holdout_split(
    data: &DatasetSplit,
    fraction: f64,
    seed: u64,
) -> Result<(DatasetSplit, DatasetSplit)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(config_err!("holdout fraction must be in (0, 1), got {}", fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_val = vec![false; data.len()];
    for class in 0..data.class_count {
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        let take = ((fraction * members.len() as f64).ceil() as usize).max(1);
        if take >= members.len() {
            return Err(config_err!(
                "class {} has {} samples; cannot hold out {} and keep one for training",
                class,
                members.len(),
                take
            ));
        }
        members.shuffle(&mut rng);
        for &i in &members[..take] {
            is_val[i] = true;
        }
    }
    let train: Vec<usize> = (0..data.len()).filter(|&i| !is_val[i]).collect();
    let val: Vec<usize> = (0..data.len()).filter(|&i| is_val[i]).collect();
    Ok((data.subset(&train), data.subset(&val)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: u8,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,phase,train_loss,val_loss,val_acc\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.epoch, r.phase, r.train_loss, r.val_loss, r.val_acc
            );
        }
        s
    }
}

/// Evaluation-mode loss and accuracy.
pub fn evaluate(net: &Network, images: &[Tensor], labels: &[usize]) -> Result<(f64, f64)> {
    let out = net.predict(images)?;
    let mut loss = 0.0;
    let mut correct = 0;
    for (s, &l) in out.scores.iter().zip(labels) {
        loss += softmax_log_loss(s, l)?.0;
        if argmax(s) == l {
            correct += 1;
        }
    }
    let n = labels.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Fresh parameters for `cfg` and a problem with `classes` classes.
pub fn init_network(cfg: &TrainConfig, classes: usize) -> Result<NetworkParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_1417);
    crate::net::NetworkParams::init(
        crate::rotconv::FilterBank::zeros(
            cfg.arch,
            cfg.groups,
            cfg.effective_orientations(),
            cfg.size,
        )?,
        classes,
        cfg.grid,
        cfg.init_std,
        &mut rng,
    )
}

struct Velocity {
    canonical: Vec<f64>,
    biases: Vec<f64>,
    fc_weights: Vec<f64>,
    fc_biases: Vec<f64>,
}

/// Runs the three-phase schedule and returns the parameters with the lowest
/// validation loss.
///
/// Phase 1 trains without decay until the epoch loss is at most half of the
/// first epoch's; phase 2 runs `phase2_epochs` epochs with
/// `weight_decay_phase2`; phase 3 trains without decay until the validation
/// loss has not improved for `patience` epochs. `max_epochs` caps the total.
pub fn train(
    params: NetworkParams,
    train_split: &DatasetSplit,
    val_split: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<(NetworkParams, TrainHistory)> {
    cfg.validate()?;
    if train_split.is_empty() || val_split.is_empty() {
        return Err(Error::Training("training and validation splits must be non-empty".into()));
    }
    if let Some(c) = train_split.class_counts().iter().position(|&c| c == 0) {
        return Err(Error::Training(format!("class {} has no training images", c)));
    }
    let mut params = params;
    params.normalization = Normalization::fit(&train_split.images);
    let norm = params.normalization;
    let train_images: Vec<Tensor> = train_split.images.par_iter().map(|t| norm.apply(t)).collect();
    let val_images: Vec<Tensor> = val_split
        .images
        .par_iter()
        .map(|t| augment_rotate_crop(&norm.apply(t), 0.0, cfg.crop))
        .collect::<Result<_>>()?;

    let mut net = Network::new(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p = net.params();
    let mut vel = Velocity {
        canonical: vec![0.0; p.bank.canonical.len()],
        biases: vec![0.0; p.bank.biases.len()],
        fc_weights: vec![0.0; p.fc_weights.len()],
        fc_biases: vec![0.0; p.fc_biases.len()],
    };

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, NetworkParams)> = None;
    let mut phase = 1u8;
    let mut first_loss = None;
    let mut phase2_done = 0usize;
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..train_images.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let decay = if phase == 2 { cfg.weight_decay_phase2 } else { 0.0 };
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let angles: Vec<f64> = chunk
                .iter()
                .map(|_| {
                    if cfg.augment_rotations {
                        rng.gen_range(0.0..2.0 * std::f64::consts::PI)
                    } else {
                        0.0
                    }
                })
                .collect();
            let batch: Vec<Tensor> = chunk
                .par_iter()
                .zip(&angles)
                .map(|(&i, &a)| augment_rotate_crop(&train_images[i], a, cfg.crop))
                .collect::<Result<_>>()?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train_split.labels[i]).collect();
            let out = net.forward(
                &batch,
                Some(&labels),
                Mode::Train {
                    dropout: cfg.dropout_rate,
                    rng: &mut rng,
                },
            )?;
            let loss = out.loss.unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total += loss * chunk.len() as f64;
            let g = net.backward()?;
            let (lr, mom) = (cfg.learning_rate, cfg.momentum);
            net.update(|p| {
                sgd_update(&mut p.bank.canonical, &g.canonical, &mut vel.canonical, lr, mom, decay, ParamKind::Weight);
                sgd_update(&mut p.bank.biases, &g.biases, &mut vel.biases, lr, mom, decay, ParamKind::Bias);
                sgd_update(&mut p.fc_weights, &g.fc_weights, &mut vel.fc_weights, lr, mom, decay, ParamKind::Weight);
                sgd_update(&mut p.fc_biases, &g.fc_biases, &mut vel.fc_biases, lr, mom, decay, ParamKind::Bias);
            });
        }
        let train_loss = total / train_images.len() as f64;
        let (val_loss, val_acc) = evaluate(&net, &val_images, &val_split.labels)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.records.push(EpochRecord {
            epoch,
            phase,
            train_loss,
            val_loss,
            val_acc,
        });
        let improved = best.as_ref().is_none_or(|(b, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, net.params().clone()));
            history.best_epoch = epoch;
        }

        match phase {
            1 => {
                let first = *first_loss.get_or_insert(train_loss);
                if train_loss <= 0.5 * first {
                    phase = if cfg.phase2_epochs > 0 { 2 } else { 3 };
                }
            }
            2 => {
                phase2_done += 1;
                if phase2_done >= cfg.phase2_epochs {
                    phase = 3;
                }
            }
            _ => {
                stale = if improved { 0 } else { stale + 1 };
                if stale >= cfg.patience {
                    break;
                }
            }
        }
    }
    let (_, best_params) = best.expect("at least one epoch ran");
    Ok((best_params, history))
}
