use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{log_sum_exp, Tensor};
use crate::csi::Split;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::dataset::{Dataset, Sample};
use super::metrics::{fmt_metric, Metrics};
use super::model::{argmax, Model};
use super::optim::Sgd;

pub const METRICS_HEADER: &str = "epoch,split,loss,accuracy,precision_macro";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub metrics: Metrics,
}

impl EpochRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{}",
            self.epoch,
            self.split,
            self.loss,
            self.metrics.accuracy,
            fmt_metric(self.metrics.precision_macro())
        )
    }
}

pub struct TrainOutcome<S> {
    /// Parameters after the last epoch.
    pub model: Model<S>,
    /// Snapshot with the best validation accuracy (the last epoch when there is
    /// no validation split).
    pub best: Checkpoint,
    /// Snapshot after the last epoch, including optimizer state.
    pub last: Checkpoint,
    pub log: Vec<EpochRecord>,
}

/// Mean loss and metrics over `samples` without updating anything.
pub fn evaluate<S: Scalar>(model: &Model<S>, samples: &[Sample<S>]) -> Result<(f64, Metrics, Vec<Tensor<S>>)> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples to evaluate".into()));
    }
    let mut loss = 0.0;
    let mut preds = Vec::with_capacity(samples.len());
    let mut truth = Vec::with_capacity(samples.len());
    let mut all = Vec::with_capacity(samples.len());
    for s in samples {
        let logits = model.logits(&s.x)?;
        loss += (log_sum_exp(logits.data()) - logits.data()[s.label]).as_f64();
        preds.push(argmax(logits.data()));
        truth.push(s.label);
        all.push(logits);
    }
    let m = Metrics::compute(&preds, &truth, model.config.classes)?;
    Ok((loss / samples.len() as f64, m, all))
}

/// Mini-batch training. Samples are visited in an order shuffled per epoch by
/// a stream seeded from `cfg.seed` and the epoch number; gradients of a batch
/// are summed in that order, so runs are reproducible bit for bit.
///
/// `on_epoch` receives every log record as soon as it exists.
pub fn train<S: Scalar>(
    mut model: Model<S>,
    data: &Dataset<S>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Empty("training split is empty".into()));
    }
    for s in data.train.iter().chain(&data.val) {
        model.check_input(s.x.shape())?;
        if s.label >= model.config.classes {
            return Err(Error::config(format!(
                "{}: label {} out of range for {} classes",
                s.source, s.label, model.config.classes
            )));
        }
    }
    let mut opt = Sgd::new(&model.store, cfg.lr, cfg.momentum);
    let mut log = Vec::new();
    let mut best = Checkpoint::capture(&model, Some(cfg), None, 0, None);
    let mut best_acc = f64::NEG_INFINITY;
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64)));
        let mut loss_sum = 0.0;
        let steps = order.len().div_ceil(cfg.batch_size);
        let mut preds = Vec::with_capacity(order.len());
        let mut truth = Vec::with_capacity(order.len());
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let weight = 1.0 / batch.len() as f64;
            let mut grads: Option<Vec<Tensor<S>>> = None;
            for &i in batch {
                let s = &data.train[i];
                let ev = model.evaluate(&s.x, s.label, weight, false)?;
                let l = ev.loss.as_f64();
                if !l.is_finite() || !ev.grads.iter().all(Tensor::is_finite) {
                    return Err(Error::Divergence { epoch, step, loss: l });
                }
                loss_sum += l;
                preds.push(argmax(ev.logits.data()));
                truth.push(s.label);
                match grads.as_mut() {
                    None => grads = Some(ev.grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&ev.grads) {
                            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                                *x += *y;
                            }
                        }
                    }
                }
            }
            opt.step(&mut model.store, &grads.expect("non-empty batch"))?;
        }
        let record = EpochRecord {
            epoch,
            split: Split::Train,
            loss: loss_sum / order.len() as f64,
            metrics: Metrics::compute(&preds, &truth, model.config.classes)?,
        };
        on_epoch(&record);
        log.push(record);

        let val_acc = if data.val.is_empty() {
            None
        } else {
            let (loss, metrics, _) = evaluate(&model, &data.val)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step: steps, loss });
            }
            let record = EpochRecord {
                epoch,
                split: Split::Val,
                loss,
                metrics,
            };
            on_epoch(&record);
            let acc = record.metrics.accuracy;
            log.push(record);
            Some(acc)
        };
        let score = val_acc.unwrap_or(f64::INFINITY);
        if score > best_acc || val_acc.is_none() {
            best_acc = score;
            best = Checkpoint::capture(&model, Some(cfg), Some(&opt), epoch, val_acc);
        }
    }
    let last = Checkpoint::capture(&model, Some(cfg), Some(&opt), cfg.epochs, log.last().map(|r| r.metrics.accuracy));
    Ok(TrainOutcome { model, best, last, log })
}

/// The whole log as CSV with [`METRICS_HEADER`].
pub fn metrics_csv(log: &[EpochRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in log {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}
