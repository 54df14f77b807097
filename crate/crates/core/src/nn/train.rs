//! Minibatch training: Adam, MSE loss, learning rate halved every epoch.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_update, AdamState};
use super::backprop::{BackpropScratch, Gradients};
use super::MlpModel;
use crate::ema::FeatureMatrix;
use crate::error::{Error, Result};

/// Feature rows paired with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: FeatureMatrix,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(features: FeatureMatrix, targets: Vec<f64>) -> Result<Self> {
        if features.rows() != targets.len() {
            return Err(Error::LengthMismatch {
                left: features.rows(),
                right: targets.len(),
            });
        }
        Ok(Dataset { features, targets })
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Concatenates `other` after `self`.
    pub fn extend(&mut self, other: &Dataset) -> Result<()> {
        self.features.append(&other.features)?;
        self.targets.extend_from_slice(&other.targets);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            batch_size: 64,
            lr0: 0.01,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::validation(
                "train config",
                "epochs must be at least 1",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::validation(
                "train config",
                "batch_size must be at least 1",
            ));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::validation(
                "train config",
                format!("lr0 must be positive, got {}", self.lr0),
            ));
        }
        Ok(())
    }
}

/// Learning rate of 1-based `epoch`: `lr0 / 2^(epoch - 1)`.
pub fn learning_rate(lr0: f64, epoch: usize) -> f64 {
    lr0 * 0.5f64.powi(epoch as i32 - 1)
}

/// Visiting order of `rows` samples in 1-based `epoch`; depends only on
/// `(seed, epoch, rows)`.
pub fn epoch_permutation(seed: u64, epoch: usize, rows: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(&mut rng);
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Full training-set MSE after each epoch.
    pub loss_history: Vec<f64>,
    pub lr_history: Vec<f64>,
    pub updates: usize,
}

fn dataset_mse(model: &MlpModel, data: &Dataset) -> Result<f64> {
    let preds = model.predict_series(&data.features)?;
    super::loss_mse(&preds, &data.targets)
}

pub fn train(
    mut model: MlpModel,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training rows"));
    }
    if data.features.width() != model.input_width() {
        return Err(Error::ShapeMismatch(format!(
            "features have width {}, model expects {}",
            data.features.width(),
            model.input_width()
        )));
    }

    let rows = data.len();
    let mut adam = AdamState::new(&model);
    let mut grads = Gradients::zeros_like(&model);
    let mut scratch = BackpropScratch::new(&model);
    let mut report = TrainReport {
        loss_history: Vec::with_capacity(cfg.epochs),
        lr_history: Vec::with_capacity(cfg.epochs),
        updates: 0,
    };
    let sequential: Vec<usize> = (0..rows).collect();

    for epoch in 1..=cfg.epochs {
        let lr = learning_rate(cfg.lr0, epoch);
        let shuffled;
        let order = if cfg.shuffle {
            shuffled = epoch_permutation(cfg.seed, epoch, rows);
            &shuffled
        } else {
            &sequential
        };
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.clear();
            let scale = 1.0 / batch.len() as f64;
            let mut sse = 0.0;
            for &r in batch {
                let pred = scratch.forward(&model, data.features.row(r));
                let t = data.targets[r];
                sse += (pred - t) * (pred - t);
                scratch.accumulate(&model, t, scale, &mut grads);
            }
            if !sse.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            adam_update(&mut model, &grads, &mut adam, lr)?;
            report.updates += 1;
        }
        let loss = dataset_mse(&model, data)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: rows.div_ceil(cfg.batch_size),
            });
        }
        report.loss_history.push(loss);
        report.lr_history.push(lr);
    }
    Ok((model, report))
}
