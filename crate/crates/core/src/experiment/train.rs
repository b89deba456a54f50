use serde::{Deserialize, Serialize};

use super::metrics::accuracy;
use super::optim::{adam_step, cosine_lr, AdamConfig, AdamState};
use crate::data::{LosoFold, SegmentSet};
use crate::error::{Error, Result};
use crate::model::PatchFormerModel;
use crate::numerics::{Mode, Rng, Scalar, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Cosine floor; the period is `epochs`.
    pub eta_min: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Share of the pooled training subjects held out for model selection.
    pub val_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            weight_decay: 1e-5,
            epochs: 200,
            batch_size: 64,
            eta_min: 0.0,
            adam: AdamConfig::default(),
            seed: 0,
            val_frac: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.epochs < 1 {
            bad.push("epochs must be at least 1".to_string());
        }
        if self.batch_size < 1 {
            bad.push("batch_size must be at least 1".to_string());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            bad.push(format!("lr0 = {} must be positive", self.lr0));
        }
        if !(0.0..1.0).contains(&self.val_frac) {
            bad.push(format!("val_frac = {} outside [0, 1)", self.val_frac));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Accuracy of the train-mode forward passes seen during the epoch.
    pub train_acc: f64,
    /// `None` when the validation set is empty.
    pub val_acc: Option<f64>,
    pub steps: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    /// Snapshot from the selected epoch.
    pub best: PatchFormerModel<T>,
    pub best_epoch: usize,
    pub best_val_acc: Option<f64>,
    pub history: Vec<EpochRecord>,
}

/// Eval-mode class-1 probabilities and argmax predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub scores: Vec<f64>,
    pub preds: Vec<usize>,
}

pub fn predict<T: Scalar>(model: &PatchFormerModel<T>, ds: &SegmentSet, batch_size: usize) -> Result<Predictions> {
    let mut scores = Vec::with_capacity(ds.len());
    let mut preds = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    let k = model.config().n_classes;
    for chunk in idx.chunks(batch_size.max(1)) {
        let p = model.predict_proba(ds.batch::<T>(chunk))?;
        for row in p.data().chunks(k) {
            scores.push(row[1.min(k - 1)].as_f64());
            let arg = row.iter().enumerate().fold(0, |best, (i, v)| if *v > row[best] { i } else { best });
            preds.push(arg);
        }
    }
    Ok(Predictions { scores, preds })
}

fn labels(ds: &SegmentSet) -> Vec<usize> {
    ds.y.iter().map(|&v| v as usize).collect()
}

/// Mini-batch Adam with a per-epoch cosine learning rate. Keeps the
/// parameters of the epoch with the highest validation accuracy, the
/// earliest on ties, or of the last epoch when `val` is empty.
pub fn fit<T: Scalar>(
    model: &mut PatchFormerModel<T>,
    train: &SegmentSet,
    val: &SegmentSet,
    tc: &TrainConfig,
    rng: &mut Rng,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    tc.validate()?;
    if train.is_empty() {
        return Err(Error::Parameter("empty training set".into()));
    }
    let cfg = model.config();
    if train.c != cfg.c || train.l != cfg.l {
        return Err(Error::Config(format!(
            "segments are {}x{} but the model expects {}x{}",
            train.c, train.l, cfg.c, cfg.l
        )));
    }
    let mut state = AdamState::new(&model.params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let val_labels = labels(val);
    let mut best: Option<(PatchFormerModel<T>, usize, Option<f64>)> = None;
    let mut history = Vec::with_capacity(tc.epochs);
    for epoch in 1..=tc.epochs {
        let lr = cosine_lr(epoch - 1, tc.epochs, tc.lr0, tc.eta_min);
        rng.shuffle(&mut order);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for chunk in order.chunks(tc.batch_size) {
            let diverged = |e: Error| match e {
                Error::NonFinite(message) => Error::Divergence { epoch, message },
                other => other,
            };
            let mut tape = Tape::new();
            let x = tape.constant(train.batch::<T>(chunk));
            let y: Vec<usize> = chunk.iter().map(|&i| train.y[i] as usize).collect();
            let trace = model.forward(&mut tape, x, Mode::Train, rng).map_err(diverged)?;
            let loss = tape.softmax_cross_entropy(trace.logits, &y).map_err(diverged)?;
            let lv = tape.value(loss).item()?.as_f64();
            if !lv.is_finite() {
                return Err(Error::Divergence { epoch, message: format!("loss {lv}") });
            }
            let logits = tape.value(trace.logits).data();
            let k = logits.len() / chunk.len();
            for (row, &label) in logits.chunks(k).zip(&y) {
                let arg = row.iter().enumerate().fold(0, |b, (i, v)| if *v > row[b] { i } else { b });
                hits += usize::from(arg == label);
            }
            loss_sum += lv * chunk.len() as f64;
            let grads = tape.backward(loss).map_err(diverged)?;
            model.params.zero_grad();
            model.params.accumulate(&grads);
            adam_step(&mut model.params, &mut state, lr, tc.weight_decay, &tc.adam).map_err(diverged)?;
        }
        let val_acc = if val.is_empty() {
            None
        } else {
            Some(accuracy(&predict(model, val, tc.batch_size)?.preds, &val_labels)?)
        };
        let rec = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_acc: 100.0 * hits as f64 / train.len() as f64,
            val_acc,
            steps: state.t,
        };
        on_epoch(&rec);
        history.push(rec);
        let better = match (&best, val_acc) {
            (None, _) => true,
            (Some((_, _, Some(b))), Some(v)) => v > *b,
            (Some(_), None) => true,
            _ => false,
        };
        if better {
            best = Some((model.clone(), epoch, val_acc));
        }
    }
    let (best, best_epoch, best_val_acc) = best.expect("at least one epoch");
    Ok(TrainOutcome { best, best_epoch, best_val_acc, history })
}

/// [`fit`] on a fold's training and validation partitions.
pub fn train<T: Scalar>(
    model: &mut PatchFormerModel<T>,
    fold: &LosoFold,
    tc: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainOutcome<T>> {
    fit(model, &fold.train, &fold.val, tc, rng, &mut |_| {})
}
