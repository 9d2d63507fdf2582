//! Mini-batch training with on-the-fly augmentation, learning-rate
//! reduction on a validation-loss plateau and early stopping on validation
//! macro F1.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::metrics::evaluate;
use super::CvError;
use crate::data::augment::augment_pixels;
use crate::data::{AugmentPolicy, ChannelStats, LabeledPatch};
use crate::model::{Model, Network};
use crate::tensor::{Optimizer, Tape, Tensor, TensorError};
use crate::transformer::{Dropout, Pass};
use crate::ConfigError;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub lr_reduce_factor: f64,
    /// Epochs without a lower validation loss before the rate is reduced.
    pub lr_patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a higher validation F1 before training stops.
    pub early_stop_patience: usize,
    pub seed: u64,
    pub augment: AugmentPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-4,
            lr_reduce_factor: 0.2,
            lr_patience: 5,
            batch_size: 8,
            max_epochs: 100,
            early_stop_patience: 10,
            seed: 0,
            augment: AugmentPolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.lr_reduce_factor > 0.0 && self.lr_reduce_factor < 1.0) {
            return Err(ConfigError(format!(
                "lr_reduce_factor {} outside (0, 1)",
                self.lr_reduce_factor
            )));
        }
        if self.lr_patience == 0 || self.early_stop_patience == 0 {
            return Err(ConfigError("patience values must be at least 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(ConfigError("batch_size and max_epochs must be positive".into()));
        }
        if !(self.initial_lr >= 0.0 && self.initial_lr.is_finite()) {
            return Err(ConfigError(format!(
                "learning rate {} must be finite and non-negative",
                self.initial_lr
            )));
        }
        self.augment.validate().map_err(|e| ConfigError(e.to_string()))
    }
}

/// Reduce-on-plateau schedule for a metric that should decrease.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    wait: usize,
}

impl Plateau {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self {
            lr,
            factor,
            patience,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    /// Records one observation; returns true when the rate was reduced.
    pub fn observe(&mut self, value: f64) -> bool {
        if value < self.best {
            self.best = value;
            self.wait = 0;
            return false;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            self.lr *= self.factor;
            self.wait = 0;
            return true;
        }
        false
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Epoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
    pub lr: f64,
}

impl Epoch {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,val_f1,lr\n";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.8},{:.8},{:.8},{:e}\n",
            self.epoch, self.train_loss, self.val_loss, self.val_f1, self.lr
        )
    }
}

/// Observer for per-epoch progress.
pub trait Progress: Sync {
    fn epoch(&self, tag: &str, epoch: &Epoch);
}

impl<F: Fn(&str, &Epoch) + Sync> Progress for F {
    fn epoch(&self, tag: &str, epoch: &Epoch) {
        self(tag, epoch)
    }
}

pub struct Trained {
    /// Parameters from the epoch with the best validation F1.
    pub model: Model,
    pub history: Vec<Epoch>,
    pub best_epoch: usize,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // SplitMix64 finalizer over the combined words.
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn dropout_rate(model: &Model) -> f64 {
    match &model.network {
        Network::Vit(c, _) => c.dropout,
        Network::Cnn(..) => 0.0,
    }
}

/// Trains `model` on `train`, selecting on `val`.
///
/// Input statistics are computed from `train` (un-augmented) and stored on
/// the returned model. Each sample's augmentation is seeded by
/// `(config.seed, epoch, position)`, so results do not depend on thread count.
pub fn train_model(
    mut model: Model,
    train: &[&LabeledPatch],
    val: &[&LabeledPatch],
    config: &TrainConfig,
    tag: &str,
    progress: Option<&dyn Progress>,
) -> Result<Trained, CvError> {
    config.validate()?;
    if train.is_empty() {
        return Err(CvError::Empty("training"));
    }
    if val.is_empty() {
        return Err(CvError::Empty("validation"));
    }
    model.input_stats = ChannelStats::compute(train.iter().map(|p| &p.pixels));
    let mut optimizer = Optimizer::adam();
    let mut plateau = Plateau::new(config.initial_lr, config.lr_reduce_factor, config.lr_patience);
    let mut best: Option<(f64, Model, usize)> = None;
    let mut wait = 0;
    let mut history = Vec::new();
    let rate = dropout_rate(&model);

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(config.seed, epoch as u64, u64::MAX)));
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let augmented: Vec<LabeledPatch> = chunk
                .par_iter()
                .map(|&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, epoch as u64, i as u64));
                    LabeledPatch {
                        pixels: augment_pixels(&train[i].pixels, &config.augment, &mut rng),
                        ..train[i].clone()
                    }
                })
                .collect();
            let images = model.batch(&augmented)?;
            let labels: Vec<usize> = augmented.iter().map(|p| p.label.index()).collect();

            let mut tape = Tape::new();
            let mut drop_rng = ChaCha8Rng::seed_from_u64(mix(config.seed, epoch as u64, (1 << 40) | b as u64));
            let mut pass = Pass {
                capture: None,
                dropout: (rate > 0.0).then_some(Dropout {
                    rate,
                    rng: &mut drop_rng,
                }),
            };
            let f = model.forward(&mut tape, &images, true, &mut pass)?;
            let loss = tape.cross_entropy(f.logits, &labels)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(CvError::NonFinite { epoch, batch: b });
            }
            loss_sum += value * chunk.len() as f64;
            tape.backward(loss)?;

            let mut params: Vec<Tensor> = f.params.iter().map(|&v| tape.value(v).clone()).collect();
            let grads: Vec<Tensor> = f
                .params
                .iter()
                .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
                .collect();
            drop(tape);
            match optimizer.step(&mut params, &grads, plateau.lr) {
                Ok(()) => {}
                Err(TensorError::NonFiniteGradient { .. }) => return Err(CvError::NonFinite { epoch, batch: b }),
                Err(e) => return Err(e.into()),
            }
            model.set_tensors(params)?;
        }

        let report = evaluate(&model, val, config.batch_size.max(32))?;
        let record = Epoch {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss: report.loss,
            val_f1: report.macro_f1,
            lr: plateau.lr,
        };
        if let Some(p) = progress {
            p.epoch(tag, &record);
        }
        history.push(record);

        if best.as_ref().is_none_or(|(f1, _, _)| report.macro_f1 > *f1) {
            best = Some((report.macro_f1, model.clone(), epoch));
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.early_stop_patience {
                break;
            }
        }
        plateau.observe(report.loss);
    }
    let (_, model, best_epoch) = best.expect("at least one epoch ran");
    Ok(Trained {
        model,
        history,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_plateau_triggers_reduce_twice() {
        let mut p = Plateau::new(1e-4, 0.2, 1);
        assert!(!p.observe(1.0));
        assert!(p.observe(1.0));
        assert!(p.observe(1.0));
        assert!((p.lr - 4e-6).abs() < 1e-18);
        assert!(!p.observe(0.5));
    }

    #[test]
    fn patience_delays_reduction() {
        let mut p = Plateau::new(1.0, 0.5, 3);
        p.observe(1.0);
        assert!(!p.observe(2.0));
        assert!(!p.observe(2.0));
        assert!(p.observe(2.0));
        assert_eq!(p.lr, 0.5);
    }

    #[test]
    fn defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!(
            (
                c.initial_lr,
                c.lr_reduce_factor,
                c.batch_size,
                c.max_epochs,
                c.early_stop_patience
            ),
            (1e-4, 0.2, 8, 100, 10)
        );
        c.validate().unwrap();
        let bad = TrainConfig {
            lr_reduce_factor: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
