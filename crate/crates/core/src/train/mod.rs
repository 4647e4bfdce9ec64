//! Masked L1 loss, Adam, and the epoch loop with early stopping.

mod adam;

pub use adam::{adam_step, clip_grad_norm, OptimizerState};

use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{IncompleteWindow, Normalizer};
use crate::error::{Error, Result};
use crate::eval::ErrorTally;
use crate::model::{save_checkpoint, Checkpoint, MagiNet};
use crate::model::layers::expand_mask;
use crate::tensor::{Tape, Tensor, Var};

/// Sum of `|xhat − truth|` over held-out positions, and the number of
/// held-out positions. `eval_mask` is `[.., N, W]` against `[.., N, W, C]`.
pub fn masked_abs_sum(tape: &mut Tape, xhat: Var, truth: &Tensor, eval_mask: &Tensor) -> Result<(Var, usize)> {
    if tape.shape(xhat) != truth.shape() {
        return Err(Error::Dimension(format!(
            "loss: prediction {:?} and ground truth {:?} differ",
            tape.shape(xhat),
            truth.shape()
        )));
    }
    let c = *truth.shape().last().unwrap_or(&1);
    let mut mshape = eval_mask.shape().to_vec();
    mshape.push(c);
    if mshape != truth.shape() {
        return Err(Error::Dimension(format!(
            "loss: mask {:?} does not cover ground truth {:?}",
            eval_mask.shape(),
            truth.shape()
        )));
    }
    let count = eval_mask.data().iter().filter(|v| **v != 0.0).count();
    let t = tape.constant(truth.clone());
    let diff = tape.sub(xhat, t)?;
    let kept = tape.masked_fill(diff, &expand_mask(eval_mask, c), 0.0)?;
    let abs = tape.abs(kept);
    Ok((tape.sum(abs), count))
}

/// Global masked mean absolute error: the absolute error averaged over
/// features, summed over held-out positions, divided by their count.
pub fn masked_l1_loss(tape: &mut Tape, xhat: Var, truth: &Tensor, eval_mask: &Tensor) -> Result<Var> {
    let (sum, count) = masked_abs_sum(tape, xhat, truth, eval_mask)?;
    if count == 0 {
        return Err(Error::EmptySelection("no held-out positions in the loss".into()));
    }
    let c = *truth.shape().last().unwrap_or(&1);
    Ok(tape.scale(sum, 1.0 / (c * count) as f64))
}

/// Optimization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Where the best parameters are written whenever they improve.
    pub checkpoint: Option<PathBuf>,
    /// Global L2 gradient-norm ceiling.
    pub clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 4,
            patience: 20,
            seed: 1,
            checkpoint: None,
            clip: None,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is allowed; it leaves the parameters untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Contract(format!("learning rate {} is not usable", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Contract("epochs and batch_size must be at least 1".into()));
        }
        if let Some(c) = self.clip {
            if c.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                return Err(Error::Contract(format!("clip threshold {c} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse: f64,
    pub val_mape: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Completed,
    EarlyStopped,
    /// The loss or a gradient went non-finite; the best parameters so far
    /// are kept.
    Diverged,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The model carrying the best-validation parameters.
    pub model: MagiNet,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch of the best validation RMSE; 0 if no epoch finished.
    pub best_epoch: usize,
    pub stop: StopReason,
}

impl TrainOutcome {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.history.iter().find(|r| r.epoch == self.best_epoch)
    }
}

/// Validation error in data units, pooled over every held-out position.
pub fn validate_model(model: &MagiNet, normalizer: &Normalizer, windows: &[IncompleteWindow]) -> Result<ErrorTally> {
    let tallies = windows
        .par_iter()
        .map(|w| {
            let z = normalizer.normalize_window(w);
            let pred = normalizer.denormalize(&model.predict(&z.x, &z.m)?);
            let mut t = ErrorTally::default();
            t.add(&pred, &w.ground_truth, &w.eval_mask)?;
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(tallies.into_iter().fold(ErrorTally::default(), |a, b| a.merge(&b)))
}

enum Step {
    Loss { sum: f64, count: usize },
    Skipped,
    Diverged,
}

fn train_step(
    model: &mut MagiNet,
    batch: &[&IncompleteWindow],
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<Step> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, true);
    let mut sums = Vec::with_capacity(batch.len());
    let mut count = 0;
    for w in batch {
        if w.held_out_count() == 0 {
            continue;
        }
        let xhat = model.forward(&mut tape, &bound, &w.x, &w.m)?;
        let (s, n) = masked_abs_sum(&mut tape, xhat, &w.ground_truth, &w.eval_mask)?;
        sums.push(s);
        count += n;
    }
    if count == 0 {
        return Ok(Step::Skipped);
    }
    let c = model.dims.n_features;
    let mut total = sums[0];
    for &s in &sums[1..] {
        total = tape.add(total, s)?;
    }
    let loss = tape.scale(total, 1.0 / (c * count) as f64);
    let loss_value = tape.value(loss).item()?;
    if !loss_value.is_finite() {
        return Ok(Step::Diverged);
    }
    tape.backward(loss)?;
    model.params.zero_grad();
    model.params.absorb_grads(&tape, &bound);
    if let Some(max) = cfg.clip {
        clip_grad_norm(&mut model.params, max);
    }
    match adam_step(&mut model.params, state, cfg.learning_rate) {
        Ok(()) => {}
        Err(Error::Numeric(_)) => return Ok(Step::Diverged),
        Err(e) => return Err(e),
    }
    Ok(Step::Loss {
        sum: loss_value * (c * count) as f64,
        count: c * count,
    })
}

/// Runs the epoch loop on raw (unnormalized) windows.
///
/// Each epoch visits the training windows in a seeded shuffled order, in
/// batches of `batch_size`, and then scores the validation windows in data
/// units. The parameters with the lowest validation RMSE are kept.
pub fn train(
    model: &MagiNet,
    train_windows: &[IncompleteWindow],
    valid_windows: &[IncompleteWindow],
    normalizer: &Normalizer,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_windows.is_empty() || valid_windows.is_empty() {
        return Err(Error::Contract(format!(
            "training needs windows in both splits (train {}, validation {})",
            train_windows.len(),
            valid_windows.len()
        )));
    }
    if valid_windows.iter().all(|w| w.held_out_count() == 0) {
        return Err(Error::EmptySelection("validation split has no held-out positions".into()));
    }
    let normalized: Vec<IncompleteWindow> = train_windows.iter().map(|w| normalizer.normalize_window(w)).collect();
    let mut current = model.clone();
    let mut best = model.clone();
    let mut state = OptimizerState::new(&current.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..normalized.len()).collect();
    let mut history = Vec::new();
    let mut best_rmse = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut stop = StopReason::Completed;

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&IncompleteWindow> = chunk.iter().map(|&i| &normalized[i]).collect();
            match train_step(&mut current, &batch, &mut state, cfg)? {
                Step::Loss { sum: s, count: n } => {
                    sum += s;
                    count += n;
                }
                Step::Skipped => {}
                Step::Diverged => {
                    stop = StopReason::Diverged;
                    break 'epochs;
                }
            }
        }
        let train_loss = if count > 0 { sum / count as f64 } else { f64::NAN };
        let tally = validate_model(&current, normalizer, valid_windows)?;
        let (val_rmse, val_mape) = (tally.rmse()?, tally.mape().unwrap_or(f64::NAN));
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_rmse,
            val_mape,
        });
        if !val_rmse.is_finite() {
            stop = StopReason::Diverged;
            break;
        }
        if val_rmse < best_rmse {
            best_rmse = val_rmse;
            best_epoch = epoch;
            since_best = 0;
            best = current.clone();
            if let Some(path) = &cfg.checkpoint {
                save_checkpoint(path, &Checkpoint::new(&best, normalizer))?;
            }
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                stop = StopReason::EarlyStopped;
                break;
            }
        }
    }
    best.params.zero_grad();
    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch,
        stop,
    })
}

/// Writes `epoch,train_loss,val_rmse,val_mape`.
pub fn write_history(history: &[EpochRecord], comment: Option<&str>, mut out: impl Write) -> std::io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "epoch,train_loss,val_rmse,val_mape")?;
    for r in history {
        writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_rmse, r.val_mape)?;
    }
    Ok(())
}
