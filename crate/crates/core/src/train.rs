//! Minibatch training loop shared by the autoencoder and both classifiers.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::nn::{LossKind, Model, OptimizerConfig, OptimizerState, Target};
use crate::rng::{self, WdRng};
use crate::tensor::Tensor;

/// Rows per forward pass when scoring whole datasets.
pub const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Trailing fraction of the training data held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            optimizer: OptimizerConfig::default(),
            validation_fraction: 0.1,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction {} must lie in [0, 1)",
                self.validation_fraction
            )));
        }
        let lr = self.optimizer.learning_rate;
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {lr} must be positive"
            )));
        }
        Ok(())
    }

    /// Seed of the per-epoch RNG (batch order, augmentation).
    pub(crate) fn epoch_rng(&self, epoch: usize) -> WdRng {
        rng::stream(rng::derive_seed(self.seed, 0x7EA1), epoch as u64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub train_acc: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Validation loss of the initial parameters, when a validation split exists.
    pub initial_val_loss: Option<f64>,
    pub epochs: Vec<EpochRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

impl History {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// `epoch,train_loss,val_loss,train_acc,val_acc`; missing values are empty.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,val_loss,train_acc,val_acc")?;
        for r in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch,
                r.train_loss,
                opt(r.val_loss),
                opt(r.train_acc),
                opt(r.val_acc)
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Forward pass over many images in fixed-size chunks; one output row each.
pub fn predict_images(model: &Model, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_CHUNK) {
        let rows: Vec<&[f64]> = chunk.iter().map(|i| i.data()).collect();
        let batch = Tensor::stack(&rows, model.spec.input_shape())?;
        let pred = model.predict(&batch)?;
        let width = pred.len() / chunk.len();
        out.extend(pred.data().chunks(width).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Callbacks that adapt the loop to one kind of network.
pub(crate) trait Task {
    /// Sample indices for one epoch, in batch order.
    fn order(&self, epoch: usize, rng: &mut WdRng) -> Vec<usize>;
    fn batch(&self, indices: &[usize], rng: &mut WdRng) -> Result<(Tensor, Target)>;
    /// `(val_loss, train_acc, val_acc)` after an epoch (or before training).
    fn evaluate(&self, model: &Model) -> Result<(Option<f64>, Option<f64>, Option<f64>)>;
}

pub(crate) fn run(
    model: &mut Model,
    cfg: &TrainConfig,
    kind: LossKind,
    task: &impl Task,
) -> Result<History> {
    cfg.validate()?;
    let mut history = History {
        initial_val_loss: task.evaluate(model)?.0,
        epochs: Vec::with_capacity(cfg.epochs),
    };
    let mut optimizer = OptimizerState::new(cfg.optimizer, &model.params);
    for epoch in 0..cfg.epochs {
        let mut rng = cfg.epoch_rng(epoch);
        let order = task.order(epoch, &mut rng);
        let (mut total, mut seen) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let (batch, target) = task.batch(idx, &mut rng)?;
            let value = match model.train_step(&mut optimizer, &batch, target, kind) {
                Ok(v) if v.is_finite() => v,
                Ok(_) | Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch }),
                Err(e) => return Err(e),
            };
            total += value * idx.len() as f64;
            seen += idx.len();
        }
        let train_loss = if seen == 0 { 0.0 } else { total / seen as f64 };
        if !train_loss.is_finite() || !model.params.tensors().all(Tensor::is_finite) {
            return Err(Error::Diverged { epoch });
        }
        let (val_loss, train_acc, val_acc) = match task.evaluate(model) {
            Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch }),
            other => other?,
        };
        if val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            train_acc,
            val_acc,
        });
    }
    model.params.epochs = cfg.epochs as u64;
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_csv_leaves_missing_fields_empty() {
        let h = History {
            initial_val_loss: None,
            epochs: vec![EpochRecord {
                epoch: 0,
                train_loss: 0.5,
                val_loss: Some(0.25),
                train_acc: None,
                val_acc: None,
            }],
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,train_loss,val_loss,train_acc,val_acc\n0,0.5,0.25,,\n"
        );
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            validation_fraction: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
