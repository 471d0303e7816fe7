use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{adam_step, LrSchedule, ModelParams, OptimizerState, Weights};

/// One CSV log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub split: String,
    pub value: f64,
}

impl LogRow {
    fn new(epoch: usize, split: &str, value: f64) -> Self {
        Self {
            epoch,
            split: split.to_string(),
            value,
        }
    }
}

pub fn write_log_csv(rows: &[LogRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "epoch,split,value")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.epoch, r.split, r.value)?;
    }
    Ok(())
}

/// Trained parameters plus the per-epoch log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<LogRow>,
    /// Epoch of the returned checkpoint; 0 means the initial parameters.
    pub best_epoch: usize,
}

/// Optimizer settings shared by every stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Optim {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    /// Batch gradients are rescaled to at most this global norm; 0 disables.
    pub grad_clip: f64,
}

impl Default for Optim {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            lr_start: 1e-3,
            lr_end: 1e-4,
            weight_decay: 1e-4,
            grad_clip: 5.0,
        }
    }
}

impl Optim {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be positive".into()));
        }
        if !(self.lr_start >= 0.0 && self.lr_end >= 0.0 && self.weight_decay >= 0.0 && self.grad_clip >= 0.0) {
            return Err(Error::Invalid(
                "learning rates, weight decay and clip norm must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministic 10% hold-out by hash of the example id.
pub fn in_validation_split(id: &str) -> bool {
    let digest = Sha256::digest(id.as_bytes());
    let head: [u8; 8] = digest[..8].try_into().expect("digest is 32 bytes");
    u64::from_le_bytes(head).is_multiple_of(10)
}

/// Held-out measurements after one epoch.
#[derive(Debug, Clone)]
pub(crate) struct Validation {
    /// Compared lexicographically; lower is better.
    pub key: (f64, f64),
    pub rows: Vec<(&'static str, f64)>,
}

impl Validation {
    pub fn single(split: &'static str, value: f64) -> Self {
        Self {
            key: (value, 0.0),
            rows: vec![(split, value)],
        }
    }
}

fn better(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Minibatch Adam over `n_train` examples with checkpoint selection.
///
/// `example_grad(params, index, epoch)` returns one example's loss and
/// gradient. `validate` scores the current parameters or returns `None`
/// when there is nothing to validate on, in which case the final
/// parameters are returned.
pub(crate) fn train_loop(
    mut params: ModelParams,
    n_train: usize,
    optim: &Optim,
    seed: u64,
    mut example_grad: impl FnMut(&ModelParams, usize, usize) -> Result<(f64, Weights)>,
    mut validate: impl FnMut(&ModelParams) -> Result<Option<Validation>>,
) -> Result<TrainOutcome> {
    optim.validate()?;
    if n_train == 0 {
        return Err(Error::EmptyInput("no training examples".into()));
    }
    let batches_per_epoch = n_train.div_ceil(optim.batch_size);
    let schedule = LrSchedule {
        start: optim.lr_start,
        end: optim.lr_end,
        total_steps: (optim.epochs * batches_per_epoch) as u64,
    };
    let mut state = OptimizerState::new(&params.weights, schedule, optim.weight_decay, optim.batch_size);
    let mut log = Vec::new();
    let mut init_loss = 0.0;
    for i in 0..n_train {
        init_loss += example_grad(&params, i, 0)?.0;
    }
    log.push(LogRow::new(0, "train", init_loss / n_train as f64));
    let mut best = validate(&params)?.map(|v| {
        log.extend(v.rows.iter().map(|(s, x)| LogRow::new(0, s, *x)));
        (v.key, params.clone(), 0)
    });

    let mut order: Vec<usize> = (0..n_train).collect();
    for epoch in 1..=optim.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(optim.batch_size).enumerate() {
            let mut grads = params.weights.zeros_like();
            let mut batch_loss = 0.0;
            for &i in batch {
                let (loss, g) = example_grad(&params, i, epoch)?;
                batch_loss += loss;
                grads.add_scaled(&g, 1.0);
            }
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: format!("batch loss {batch_loss}, examples {batch:?}"),
                });
            }
            grads.scale(1.0 / batch.len() as f64);
            if optim.grad_clip > 0.0 {
                let norm = grads.norm();
                if norm > optim.grad_clip {
                    grads.scale(optim.grad_clip / norm);
                }
            }
            adam_step(&mut params.weights, &grads, &mut state);
            epoch_loss += batch_loss;
        }
        log.push(LogRow::new(epoch, "train", epoch_loss / n_train as f64));
        if let Some(v) = validate(&params)? {
            log.extend(v.rows.iter().map(|(s, x)| LogRow::new(epoch, s, *x)));
            if let Some((best_v, best_p, best_e)) = best.as_mut() {
                if better(v.key, *best_v) {
                    *best_v = v.key;
                    *best_p = params.clone();
                    *best_e = epoch;
                }
            }
        }
    }
    Ok(match best {
        Some((_, p, e)) => TrainOutcome {
            params: p,
            log,
            best_epoch: e,
        },
        None => TrainOutcome {
            params,
            log,
            best_epoch: optim.epochs,
        },
    })
}
