//! Cross-entropy loss, Adam, and the training loop.

mod adam;
mod fit;
mod loss;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState};
pub use fit::{
    backward, clip_global_norm, evaluate, evaluate_features, fit, fit_from, format_epoch_line, history_tsv, input_stats,
    loss_and_grad, write_history, BestCheckpoint, EpochRecord, Evaluation, TrainState, HISTORY_HEADER,
};
pub use loss::{cross_entropy, cross_entropy_grad, predict, softmax};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    CosineDecay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub lr_schedule: LrSchedule,
    /// Cosine decay ends at `lr · final_lr_ratio`.
    pub final_lr_ratio: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    /// Set the model's input standardization from training-set statistics
    /// before initialization.
    pub standardize_input: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            lr: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            lr_schedule: LrSchedule::CosineDecay,
            final_lr_ratio: 0.01,
            clip_norm: 1.0,
            standardize_input: true,
        }
    }
}

impl TrainConfig {
    /// `lr = 0` is accepted and freezes the parameters.
    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs >= 1, InvalidArgument, "epochs must be >= 1");
        ensure!(self.batch_size >= 1, InvalidArgument, "batch_size must be >= 1");
        ensure!(
            self.lr >= 0.0 && self.lr.is_finite(),
            InvalidArgument,
            "lr must be finite and >= 0, got {}",
            self.lr
        );
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            ensure!((0.0..1.0).contains(&b), InvalidArgument, "{name} must be in [0, 1), got {b}");
        }
        ensure!(self.adam_eps > 0.0, InvalidArgument, "adam_eps must be positive");
        ensure!(
            (0.0..=1.0).contains(&self.final_lr_ratio),
            InvalidArgument,
            "final_lr_ratio must be in [0, 1]"
        );
        ensure!(self.clip_norm >= 0.0, InvalidArgument, "clip_norm must be >= 0");
        Ok(())
    }
}

/// Learning rate for optimizer step `step` (0-based) of `total`.
pub fn scheduled_lr(cfg: &TrainConfig, step: u64, total: u64) -> f64 {
    match cfg.lr_schedule {
        LrSchedule::Constant => cfg.lr,
        LrSchedule::CosineDecay => {
            let lo = cfg.lr * cfg.final_lr_ratio;
            let frac = if total <= 1 { 0.0 } else { step.min(total - 1) as f64 / (total - 1) as f64 };
            lo + 0.5 * (cfg.lr - lo) * (1.0 + (std::f64::consts::PI * frac).cos())
        }
    }
}
