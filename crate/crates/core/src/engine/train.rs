use serde::{Deserialize, Serialize};

use super::{clip_global_norm, evaluate, Adam, AdamConfig, MetricReport};
use crate::data::{batch_iter, SampleRecord};
use crate::error::{HlgtError, Result};
use crate::head::{infer_segment, LossWeights};
use crate::model::Model;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Linear decay of the learning rate to zero over `epochs`.
    pub lr_decay: bool,
    /// Fraction of a single dataset used for training; the rest validates.
    pub train_fraction: f64,
    pub loss: LossWeights,
    pub eval_n: Vec<usize>,
    pub eval_m: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip_norm: 1.0,
            epochs: 50,
            batch_size: 16,
            early_stop_patience: 10,
            seed: 0,
            lr_decay: true,
            train_fraction: 0.8,
            loss: LossWeights::default(),
            eval_n: vec![1, 5],
            eval_m: vec![0.3, 0.5, 0.7],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HlgtError::Config(format!("train: {m}")));
        if !(self.learning_rate > 0.0) || !(self.grad_clip_norm >= 0.0) {
            return bad("learning_rate must be positive and grad_clip_norm non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return bad("adam betas must lie in [0, 1) and eps be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie strictly between 0 and 1");
        }
        let w = &self.loss;
        if [w.l1, w.iou, w.f, w.neg].iter().any(|x| !(*x >= 0.0)) {
            return bad("loss weights must be non-negative");
        }
        if self.eval_n.is_empty() || self.eval_m.is_empty() || self.eval_n.contains(&0) {
            return bad("eval_n and eval_m must be non-empty with positive n");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.lr_decay {
            self.learning_rate * (1.0 - epoch as f64 / self.epochs as f64)
        } else {
            self.learning_rate
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub grad_norm: f64,
    pub val_r1_iou05: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub stopped_early: bool,
    pub val_report: MetricReport,
}

/// One optimizer step on `batch`. Returns the mean loss and the gradient
/// norm before clipping.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    batch: &[&SampleRecord],
    cfg: &TrainConfig,
    lr: f64,
) -> Result<(f64, f64)> {
    if batch.is_empty() {
        return Err(HlgtError::Empty("batch"));
    }
    let mut tape = Tape::<f32>::new();
    let bind = model.params.bind(&mut tape)?;
    let mut total = None;
    for s in batch {
        let video = model.fit_frames(&s.video);
        let (loss, _) = model.sample_loss(&mut tape, &bind, &video, &s.query, &s.gt, &cfg.loss)?;
        total = Some(match total {
            None => loss,
            Some(t) => tape.add(t, loss)?,
        });
    }
    let total = tape.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64)?;
    let loss = tape.scalar(total) as f64;
    if !loss.is_finite() {
        return Err(HlgtError::NonFiniteInput("training loss"));
    }
    tape.backward(total)?;
    let mut grads: Vec<Vec<f32>> = bind.vars().iter().map(|&v| tape.grad_or_zeros(v)).collect();
    let norm = clip_global_norm(&mut grads, cfg.grad_clip_norm);
    adam.step(model.params.tensors_mut(), &grads, lr)?;
    Ok((loss, norm))
}

/// Adam training with linear learning-rate decay and early stopping on
/// validation R@1, IoU>0.5. The model ends up holding the best parameters.
pub fn train(
    model: &mut Model,
    cfg: &TrainConfig,
    train_set: &[SampleRecord],
    val_set: &[SampleRecord],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(HlgtError::Empty("training or validation set"));
    }
    let mut adam = Adam::new(cfg.adam(), model.params.tensors());
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Vec<Tensor<f32>>, MetricReport)> = None;
    let mut stopped_early = false;
    for epoch in 0..cfg.epochs {
        let start = std::time::Instant::now();
        let lr = cfg.lr_at(epoch);
        let shuffle = cfg
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(epoch as u64);
        let (mut loss_sum, mut norm_sum, mut batches) = (0.0, 0.0, 0usize);
        for (b, idx) in batch_iter(train_set.len(), cfg.batch_size, Some(shuffle)).enumerate() {
            let batch: Vec<&SampleRecord> = idx.iter().map(|&i| &train_set[i]).collect();
            let (loss, norm) =
                train_step(model, &mut adam, &batch, cfg, lr).map_err(|e| HlgtError::Diverged {
                    epoch,
                    batch: b,
                    source: Box::new(e),
                })?;
            loss_sum += loss;
            norm_sum += norm;
            batches += 1;
        }
        let mut thresholds = cfg.eval_m.clone();
        if !thresholds.contains(&0.5) {
            thresholds.push(0.5);
        }
        let mut tops = cfg.eval_n.clone();
        if !tops.contains(&1) {
            tops.insert(0, 1);
        }
        let report = evaluate(model, val_set, &tops, &thresholds)?;
        let metric = report.recall(1, 0.5).expect("R@1,0.5 evaluated");
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / batches as f64,
            grad_norm: norm_sum / batches as f64,
            val_r1_iou05: metric,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.push(record);
        if best.as_ref().is_none_or(|b| metric > b.1) {
            best = Some((epoch, metric, model.params.tensors().to_vec(), report));
        } else if epoch - best.as_ref().expect("set").0 >= cfg.early_stop_patience {
            stopped_early = true;
            break;
        }
    }
    let (best_epoch, best_metric, params, val_report) = best.expect("at least one epoch");
    model.params.replace_all(params)?;
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_metric,
        stopped_early,
        val_report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub start_sec: f64,
    pub end_sec: f64,
    pub confidence: f64,
    pub slot: usize,
}

/// One forward pass; the most confident slot rescaled to seconds.
pub fn infer(
    model: &Model,
    video: &Tensor<f32>,
    query: &Tensor<f32>,
    duration: f64,
) -> Result<Inference> {
    if !(duration > 0.0) {
        return Err(HlgtError::InvalidArgument(format!(
            "duration must be positive, got {duration}"
        )));
    }
    let best = infer_segment(&model.predict(video, query)?)?;
    Ok(Inference {
        start_sec: best.bounds.start * duration,
        end_sec: best.bounds.end * duration,
        confidence: best.confidence,
        slot: best.slot,
    })
}
