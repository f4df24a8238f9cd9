//! Mini-batch training with early stopping on validation pixel accuracy.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::TrainCtx;
use super::loss::{dice, loss_and_grad};
use super::model::{Network, Weights};
use super::optim::{Adam, AdamParams};
use super::tensor::Tensor;
use crate::dataset::TrainingExample;
use crate::error::{Error, Result};
use crate::imgproc::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub lr: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 32,
            lr: 1e-3,
            patience: 5,
            max_epochs: 100,
            seed: 0,
        }
    }
}

/// Early-stopping bookkeeping: a strict improvement resets the counter;
/// `patience` epochs without one end training.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<(usize, f64)>,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopDecision {
        match self.best {
            Some((_, b)) if metric <= b => {
                self.stale += 1;
                if self.stale >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, metric));
                self.stale = 0;
                StopDecision::Improved
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn write_history_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "val_accuracy"])?;
        for r in &self.history {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_accuracy.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }
}

/// Held-out quality of a network: pixel accuracy at threshold 0.5 and mean
/// per-example Dice loss of the probability maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub dice_loss: f64,
}

fn batch_tensors(examples: &[&TrainingExample]) -> Result<(Tensor, Tensor)> {
    let images: Vec<&GrayImage> = examples.iter().map(|e| &e.image).collect();
    let masks: Vec<GrayImage> = examples.iter().map(|e| e.mask.to_image(e.image.ppc())).collect();
    let mask_refs: Vec<&GrayImage> = masks.iter().collect();
    Ok((Tensor::from_images(&images)?, Tensor::from_images(&mask_refs)?))
}

pub fn evaluate(net: &Network, set: &[TrainingExample]) -> Result<EvalMetrics> {
    if set.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let (mut correct, mut total, mut dice_sum) = (0usize, 0usize, 0.0);
    for chunk in set.chunks(16) {
        let refs: Vec<&TrainingExample> = chunk.iter().collect();
        let (x, t) = batch_tensors(&refs)?;
        let y = net.infer(&x)?;
        correct += y
            .data
            .iter()
            .zip(&t.data)
            .filter(|(p, t)| (**p >= 0.5) == (**t >= 0.5))
            .count();
        total += y.data.len();
        for b in 0..y.n {
            dice_sum += dice(y.item(b), t.item(b));
        }
    }
    Ok(EvalMetrics {
        accuracy: correct as f64 / total as f64,
        dice_loss: dice_sum / set.len() as f64,
    })
}

/// One optimizer step on a batch; returns the batch loss.
pub fn train_step(net: &mut Network, opt: &mut Adam, batch: &[&TrainingExample], ctx: &mut TrainCtx) -> Result<f64> {
    let (x, t) = batch_tensors(batch)?;
    net.zero_grad();
    let y = net.forward_train(&x, ctx)?;
    let (l, g) = loss_and_grad(net.config().loss, &y, &t)?;
    net.backward(&g);
    opt.step(net)?;
    Ok(l)
}

/// Trains `net` in place and leaves it holding the best-validation weights.
///
/// `on_epoch` is called after every epoch with its record and the network
/// as it stands at the end of that epoch.
pub fn train(
    net: &mut Network,
    train_set: &[TrainingExample],
    val_set: &[TrainingExample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &Network),
) -> Result<TrainReport> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Empty("training and validation sets must be nonempty".into()));
    }
    if cfg.batch == 0 || cfg.max_epochs == 0 || cfg.patience == 0 {
        return Err(Error::InvalidParam(
            "batch, epochs and patience must be positive".into(),
        ));
    }
    let mut opt = Adam::new(AdamParams::with_lr(cfg.lr));
    let mut ctx = TrainCtx::training(cfg.seed);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0bad_cafe_f00d);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best: Option<Weights> = None;
    let mut history = Vec::new();
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch) {
            let batch: Vec<&TrainingExample> = idx.iter().map(|&i| &train_set[i]).collect();
            loss_sum += train_step(net, &mut opt, &batch, &mut ctx)? * batch.len() as f64;
        }
        let val = evaluate(net, val_set)?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_accuracy: val.accuracy,
        };
        log::info!(
            "epoch {epoch}: train_loss={:.5} val_accuracy={:.5}",
            rec.train_loss,
            rec.val_accuracy
        );
        history.push(rec);
        on_epoch(&rec, net);
        match stopper.observe(epoch, val.accuracy) {
            StopDecision::Improved => best = Some(net.weights()),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    let best_epoch = stopper.best.map_or(0, |(e, _)| e);
    if let Some(w) = best {
        net.set_weights(&w)?;
    }
    Ok(TrainReport {
        history,
        best_epoch,
        stopped_early,
    })
}
