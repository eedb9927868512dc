use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::loss::{cross_entropy, cross_entropy_grad, predict};
use super::{scheduled_lr, TrainConfig};
use crate::data::{Dataset, SignalWindow};
use crate::error::{ensure, Error, Result};
use crate::fas::FasFeatures;
use crate::model::{backward_batch, forward_batch, init_params, ModelConfig, ModelParams, Mode};

/// Sequences per batched forward pass at evaluation time. Fixed so that
/// evaluation results never depend on the training batch size.
const EVAL_CHUNK: usize = 64;
/// Stream separation between parameter init and shuffling/dropout.
const TRAIN_STREAM: u64 = 0x7261_696e;

/// Mean cross-entropy over the batch and its exact gradient.
pub fn loss_and_grad(p: &ModelParams, seqs: &[&[f64]], labels: &[u8], mode: Mode<'_>) -> Result<(f64, ModelParams)> {
    ensure!(!seqs.is_empty(), InvalidArgument, "empty batch");
    ensure!(
        seqs.len() == labels.len(),
        Shape,
        "{} sequences but {} labels",
        seqs.len(),
        labels.len()
    );
    let (logits, tape) = forward_batch(p, seqs, mode)?;
    let scale = 1.0 / seqs.len() as f64;
    let mut loss = 0.0;
    let dlogits: Vec<[f64; 2]> = logits
        .iter()
        .zip(labels)
        .map(|(&l, &y)| {
            loss += cross_entropy(l, y as usize);
            let g = cross_entropy_grad(l, y as usize);
            [g[0] * scale, g[1] * scale]
        })
        .collect();
    let grads = backward_batch(p, &tape, &dlogits)?;
    Ok((loss * scale, grads))
}

/// [`loss_and_grad`] in eval mode over a batch of FAS features.
pub fn backward(p: &ModelParams, batch: &[FasFeatures], labels: &[u8]) -> Result<(f64, ModelParams)> {
    for f in batch {
        p.config.check_features(f)?;
    }
    let seqs: Vec<&[f64]> = batch.iter().map(|f| f.values.as_slice()).collect();
    loss_and_grad(p, &seqs, labels, Mode::Eval)
}

/// Scales `g` so its global norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm(g: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = g.global_norm();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        g.for_each_mut(|_, t| t.iter_mut().for_each(|v| *v *= s));
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<u8>,
    pub labels: Vec<u8>,
    pub mean_loss: f64,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        let hits = self.predictions.iter().zip(&self.labels).filter(|(p, l)| p == l).count();
        hits as f64 / self.labels.len() as f64
    }
}

/// Eval-mode predictions and mean loss over precomputed input sequences.
pub fn evaluate_features(p: &ModelParams, seqs: &[Vec<f64>], labels: &[u8]) -> Result<Evaluation> {
    ensure!(!seqs.is_empty(), InvalidArgument, "nothing to evaluate");
    ensure!(seqs.len() == labels.len(), Shape, "{} sequences but {} labels", seqs.len(), labels.len());
    let mut predictions = Vec::with_capacity(seqs.len());
    let mut loss = 0.0;
    for (chunk, lab) in seqs.chunks(EVAL_CHUNK).zip(labels.chunks(EVAL_CHUNK)) {
        let refs: Vec<&[f64]> = chunk.iter().map(Vec::as_slice).collect();
        let (logits, _) = forward_batch(p, &refs, Mode::Eval)?;
        for (l, &y) in logits.into_iter().zip(lab) {
            loss += cross_entropy(l, y as usize);
            predictions.push(predict(l));
        }
    }
    Ok(Evaluation {
        predictions,
        labels: labels.to_vec(),
        mean_loss: loss / seqs.len() as f64,
    })
}

fn prepare(cfg: &ModelConfig, windows: &[SignalWindow]) -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
    let mut scratch = Vec::new();
    let mut seqs = Vec::with_capacity(windows.len());
    for w in windows {
        cfg.seq_len(w.samples.len())?;
        let mut out = Vec::new();
        cfg.features_into(&w.samples, &mut scratch, &mut out)?;
        seqs.push(out);
    }
    Ok((seqs, windows.iter().map(|w| w.label as u8).collect()))
}

/// Front-end plus eval-mode forward over raw windows.
pub fn evaluate(p: &ModelParams, windows: &[SignalWindow]) -> Result<Evaluation> {
    let (seqs, labels) = prepare(&p.config, windows)?;
    evaluate_features(p, &seqs, &labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestCheckpoint {
    pub epoch: usize,
    pub val_acc: f64,
    pub val_loss: f64,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: AdamState,
    pub rng: ChaCha8Rng,
    pub history: Vec<EpochRecord>,
    pub best: Option<BestCheckpoint>,
}

/// Trains a freshly initialized model (seeded by `train_cfg.seed`).
pub fn fit(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    ds: &Dataset,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainState> {
    model_cfg.validate()?;
    let mut cfg = model_cfg.clone();
    if train_cfg.standardize_input {
        ensure!(!ds.train.is_empty(), InvalidArgument, "training split is empty");
        let (seqs, _) = prepare(&cfg, &ds.train)?;
        (cfg.input_center, cfg.input_scale) = input_stats(&seqs);
        ensure!(
            cfg.input_center.is_finite() && cfg.input_scale.is_finite(),
            InvalidArgument,
            "training inputs contain non-finite values"
        );
    }
    fit_from(init_params(&cfg, train_cfg.seed), train_cfg, ds, on_epoch)
}

/// Mean and reciprocal standard deviation over every value of `seqs`; the
/// scale falls back to 1 when the values are (nearly) constant.
pub fn input_stats(seqs: &[Vec<f64>]) -> (f64, f64) {
    let count = seqs.iter().map(Vec::len).sum::<usize>() as f64;
    let mean = seqs.iter().flatten().sum::<f64>() / count;
    let var = seqs.iter().flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    let sd = var.sqrt();
    let scale = if sd > 1e-12 * mean.abs().max(1.0) { 1.0 / sd } else { 1.0 };
    (mean, scale)
}

/// Trains starting from `params`.
pub fn fit_from(
    params: ModelParams,
    cfg: &TrainConfig,
    ds: &Dataset,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainState> {
    cfg.validate()?;
    ensure!(!ds.train.is_empty(), InvalidArgument, "training split is empty");
    ensure!(!ds.val.is_empty(), InvalidArgument, "validation split is empty");
    let (train_x, train_y) = prepare(&params.config, &ds.train)?;
    let (val_x, val_y) = prepare(&params.config, &ds.val)?;

    let n = train_x.len();
    let batches = n.div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches) as u64;
    let mut state = TrainState {
        adam: AdamState::new(&params),
        params,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ TRAIN_STREAM),
        history: Vec::with_capacity(cfg.epochs),
        best: None,
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut seqs: Vec<&[f64]> = Vec::with_capacity(cfg.batch_size);
    let mut labels: Vec<u8> = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut state.rng);
        let mut loss_sum = 0.0;
        let mut lr = cfg.lr;
        for idx in order.chunks(cfg.batch_size) {
            seqs.clear();
            labels.clear();
            seqs.extend(idx.iter().map(|&i| train_x[i].as_slice()));
            labels.extend(idx.iter().map(|&i| train_y[i]));
            let step = state.adam.step;
            let (loss, mut grads) = loss_and_grad(&state.params, &seqs, &labels, Mode::Train { rng: &mut state.rng })?;
            let gnorm = clip_global_norm(&mut grads, cfg.clip_norm);
            if !loss.is_finite() || !gnorm.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            lr = scheduled_lr(cfg, step, total_steps);
            adam_step(&mut state.params, &mut state.adam, &grads, cfg, lr);
            loss_sum += loss * idx.len() as f64;
        }
        let val = evaluate_features(&state.params, &val_x, &val_y)?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            val_loss: val.mean_loss,
            val_acc: val.accuracy(),
            lr,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        let better = match &state.best {
            None => true,
            Some(b) => rec.val_acc > b.val_acc || (rec.val_acc == b.val_acc && rec.val_loss < b.val_loss),
        };
        if better {
            state.best = Some(BestCheckpoint {
                epoch,
                val_acc: rec.val_acc,
                val_loss: rec.val_loss,
                params: state.params.clone(),
            });
        }
        state.history.push(rec);
        on_epoch(&rec);
    }
    Ok(state)
}

pub const HISTORY_HEADER: &str = "epoch\ttrain_loss\tval_loss\tval_acc\tlr\twall_ms";

/// One log line per epoch.
pub fn format_epoch_line(r: &EpochRecord) -> String {
    format!(
        "epoch {:>3}  train_loss {:.6}  val_loss {:.6}  val_acc {:.4}  lr {:.3e}  wall_ms {:.0}",
        r.epoch, r.train_loss, r.val_loss, r.val_acc, r.lr, r.wall_ms
    )
}

/// Tab-separated history with a header row.
pub fn history_tsv(history: &[EpochRecord]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in history {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{:.3}",
            r.epoch, r.train_loss, r.val_loss, r.val_acc, r.lr, r.wall_ms
        );
    }
    s
}

pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, history_tsv(history)).map_err(|e| Error::io(path, e))
}
