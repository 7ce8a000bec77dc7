use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Mode, Model};
use crate::autodiff::{Adam, AdamConfig, Real};
use crate::dataset::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{binarize, confusion, f1, mcc, DEFAULT_THRESHOLD};
use crate::ontology::Namespace;

const SPLIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

/// Multiplies the learning rate by `factor` after `patience` epochs without a
/// new best validation loss, never going below `min_lr`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            factor: 0.5,
            patience: 5,
            min_lr: 1e-7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub schedule: LrSchedule,
    /// Threshold for the validation F1 and MCC columns of the log.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            learning_rate: 1e-5,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            batch_size: 100,
            epochs: 48,
            validation_fraction: 0.1,
            schedule: LrSchedule::default(),
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn for_namespace(ns: Namespace) -> Self {
        TrainConfig {
            epochs: match ns {
                Namespace::BiologicalProcess => 48,
                Namespace::CellularComponent => 128,
                Namespace::MolecularFunction => 155,
            },
            ..TrainConfig::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction must be in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning_rate {}", self.learning_rate)));
        }
        if !(self.schedule.factor > 0.0 && self.schedule.factor <= 1.0) {
            return Err(Error::Config(format!("schedule factor must be in (0, 1], got {}", self.schedule.factor)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
    pub val_mcc: f64,
    pub learning_rate: f64,
}

impl EpochLog {
    pub const TSV_HEADER: &'static str = "epoch\ttrain_loss\tval_loss\tval_f1\tval_mcc\tlearning_rate";

    pub fn to_tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.epoch, self.train_loss, self.val_loss, self.val_f1, self.val_mcc, self.learning_rate
        )
    }

    pub fn to_tsv(log: &[EpochLog]) -> String {
        let mut s = format!("{}\n", Self::TSV_HEADER);
        for row in log {
            s.push_str(&row.to_tsv_row());
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model<f32>,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// Seeded shuffle into (train, validation) index lists, each sorted.
pub fn split_indices(n: usize, validation_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Dataset(format!("need at least 2 rows to split, got {n}")));
    }
    let n_val = ((n as f64 * validation_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    order.shuffle(&mut rng);
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

fn check_pairing<T: Real>(model: &Model<T>, ds: &Dataset) -> Result<()> {
    let cfg = model.config();
    if ds.num_labels() != cfg.output_dim {
        return Err(Error::Incompatible(format!(
            "dimension mismatch: model has {} outputs, dataset has {} labels",
            cfg.output_dim,
            ds.num_labels()
        )));
    }
    if ds.alphabet().hash() != cfg.alphabet_hash() {
        return Err(Error::Incompatible(format!(
            "alphabet mismatch: model {}, dataset {}",
            cfg.alphabet_hash(),
            ds.alphabet().hash()
        )));
    }
    Ok(())
}

/// Splits `dataset` with [`split_indices`] and trains.
pub fn train(model: Model<f32>, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_pairing(&model, dataset)?;
    let (tr, va) = split_indices(dataset.len(), cfg.validation_fraction, cfg.seed)?;
    train_with_split(model, &dataset.subset(&tr), &dataset.subset(&va), cfg)
}

/// Eval-mode probabilities for every row, row-major, in dataset order.
pub fn predict_dataset<T: Real>(model: &Model<T>, ds: &Dataset, batch_size: usize) -> Result<Vec<T>> {
    let rows: Vec<usize> = (0..ds.len()).collect();
    let parts: Vec<Vec<T>> = rows
        .par_chunks(batch_size.max(1))
        .map(|chunk| model.predict_batch(&ds.batch(chunk)?))
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

fn mean_bce(probs: &[f32], targets: &[u8], rows: usize) -> f64 {
    let lo = crate::autodiff::BCE_CLAMP;
    let total: f64 = probs
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            // mirrors the clamp inside the graph loss
            let p = (p as f64).clamp(lo, 1.0 - lo);
            if y == 1 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum();
    -total / rows as f64
}

fn targets_of(batch: &Batch) -> Vec<f32> {
    batch.targets.iter().map(|&y| y as f32).collect()
}

/// Trains on `train_set`, selecting parameters by loss on `val_set`. The two
/// may be the same dataset.
pub fn train_with_split(
    mut model: Model<f32>,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_pairing(&model, train_set)?;
    check_pairing(&model, val_set)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Dataset("training and validation sets must be non-empty".into()));
    }
    let mut adam = Adam::new(cfg.adam(), model.params());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(DROPOUT_STREAM);

    let mut lr = cfg.learning_rate;
    let mut best: Option<(f64, usize, Model<f32>)> = None;
    let mut stale = 0usize;
    let mut log = Vec::with_capacity(cfg.epochs);
    let val_targets: Vec<u8> = (0..val_set.len()).flat_map(|r| val_set.labels(r).to_vec()).collect();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (bi, rows) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_set.batch(rows)?;
            let targets = targets_of(&batch);
            let (value, moments, grads) = {
                let mut g = model.graph();
                let (probs, moments) = model.forward(&mut g, &batch, Mode::Train, &mut dropout_rng)?;
                let loss = g.bce_loss(probs, &targets)?;
                let value = g.value(loss).data()[0] as f64;
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: bi, value });
                }
                (value, moments, g.backward(loss)?)
            };
            if let Some(m) = moments {
                model.bn_stats.update(&m);
            }
            adam.step(model.params_mut(), &grads)?;
            loss_sum += value * rows.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;

        let probs = predict_dataset(&model, val_set, cfg.batch_size)?;
        let val_loss = mean_bce(&probs, &val_targets, val_set.len());
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: 0,
                value: val_loss,
            });
        }
        let counts = confusion(&binarize(&probs, cfg.threshold), &val_targets, val_set.num_labels())?;
        let row = EpochLog {
            epoch,
            train_loss,
            val_loss,
            val_f1: f1(&counts.micro),
            val_mcc: mcc(&counts.micro),
            learning_rate: lr,
        };
        log::info!(
            "epoch {epoch}: train_loss {:.6} val_loss {:.6} val_f1 {:.4} val_mcc {:.4} lr {:.2e}",
            row.train_loss,
            row.val_loss,
            row.val_f1,
            row.val_mcc,
            lr
        );
        log.push(row);

        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.schedule.patience && lr > cfg.schedule.min_lr {
                lr = (lr * cfg.schedule.factor).max(cfg.schedule.min_lr);
                adam.set_learning_rate(lr);
                log::info!("validation loss plateaued, learning rate now {lr:.2e}");
                stale = 0;
            }
        }
    }
    let (best_epoch, model) = match best {
        Some((_, e, m)) => (e, m),
        None => (0, model),
    };
    Ok(TrainOutcome {
        model,
        best_epoch,
        log,
    })
}
