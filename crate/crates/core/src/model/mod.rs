//! The classifier: scalar lift, pre-norm residual stack of gated selective
//! SSM blocks, final RMSNorm and a two-logit head.

mod checkpoint;
mod layers;
mod network;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::fas::{fas_transform_into, FasConfig, FasFeatures};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use layers::block_forward;
pub use network::{backward_batch, forward_batch, model_forward, Mode, Tape, Workspace};
pub use params::{
    init_params, param_count_formula, BlockParams, HeadParams, MlpHidden, ModelParams, NamedTensor,
};

/// RMSNorm regularizer.
pub const RMS_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    /// Linear map of the last sequence position.
    LinearLast,
    /// Dropout (training only) before the last-position linear map.
    LinearDropout,
    /// Linear → ReLU → linear on the last position.
    Mlp,
    /// Linear map of the mean over positions.
    MeanPoolLinear,
}

impl HeadKind {
    pub const ALL: [HeadKind; 4] = [
        HeadKind::LinearLast,
        HeadKind::LinearDropout,
        HeadKind::Mlp,
        HeadKind::MeanPoolLinear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::LinearLast => "linear-last",
            HeadKind::LinearDropout => "linear-dropout",
            HeadKind::Mlp => "mlp",
            HeadKind::MeanPoolLinear => "mean-pool-linear",
        }
    }
}

/// What the model consumes: FAS features (length `2k`) or the raw window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Frontend {
    Fas,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub expand: usize,
    pub n_state: usize,
    pub n_blocks: usize,
    pub conv_width: usize,
    pub k_fas: usize,
    pub head_kind: HeadKind,
    pub dropout_p: f64,
    pub frontend: Frontend,
    /// Input standardization `(s − input_center) · input_scale`, applied to
    /// every scalar before the lift.
    pub input_center: f64,
    pub input_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            expand: 2,
            n_state: 16,
            n_blocks: 4,
            conv_width: 4,
            k_fas: 512,
            head_kind: HeadKind::LinearLast,
            dropout_p: 0.1,
            frontend: Frontend::Fas,
            input_center: 0.0,
            input_scale: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    /// Input width of the final linear map of the head.
    pub fn head_width(&self) -> usize {
        self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.d_model >= 1, InvalidArgument, "d_model must be >= 1");
        ensure!(self.expand >= 1, InvalidArgument, "expand must be >= 1");
        ensure!(self.n_state >= 1, InvalidArgument, "n_state must be >= 1");
        ensure!(self.conv_width >= 1, InvalidArgument, "conv_width must be >= 1");
        ensure!(self.k_fas >= 1, InvalidArgument, "k_fas must be >= 1");
        ensure!(
            (0.0..1.0).contains(&self.dropout_p),
            InvalidArgument,
            "dropout_p must be in [0, 1), got {}",
            self.dropout_p
        );
        ensure!(
            self.input_center.is_finite() && self.input_scale.is_finite() && self.input_scale > 0.0,
            InvalidArgument,
            "input_center must be finite and input_scale finite and positive"
        );
        Ok(())
    }

    pub fn fas(&self) -> FasConfig {
        FasConfig::new(self.k_fas)
    }

    /// Sequence length the model sees for windows of `window_len` samples.
    pub fn seq_len(&self, window_len: usize) -> Result<usize> {
        match self.frontend {
            Frontend::Fas => {
                ensure!(
                    2 * self.k_fas <= window_len,
                    Shape,
                    "model k_fas = {} needs windows of at least {} samples, but the windows have {window_len} (k_fas <= {})",
                    self.k_fas,
                    2 * self.k_fas,
                    window_len / 2
                );
                Ok(2 * self.k_fas)
            }
            Frontend::Raw => Ok(window_len),
        }
    }

    /// Turns a raw window into the model's input sequence.
    pub fn features_into(&self, window: &[f64], scratch: &mut Vec<f64>, out: &mut Vec<f64>) -> Result<()> {
        match self.frontend {
            Frontend::Fas => {
                out.resize(2 * self.k_fas, 0.0);
                fas_transform_into(window, self.fas(), scratch, out)
            }
            Frontend::Raw => {
                out.clear();
                out.extend_from_slice(window);
                Ok(())
            }
        }
    }

    pub fn features(&self, window: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        self.features_into(window, &mut Vec::with_capacity(window.len()), &mut out)?;
        Ok(out)
    }

    pub(crate) fn check_features(&self, f: &FasFeatures) -> Result<()> {
        ensure!(
            f.values.len() == 2 * self.k_fas,
            Shape,
            "feature length {} does not match 2·k_fas = {}",
            f.values.len(),
            2 * self.k_fas
        );
        Ok(())
    }
}

/// `x_i · gain_i / sqrt(mean(x²) + ε)`.
pub fn rmsnorm(x: &[f64], gain: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    layers::rmsnorm_row(x, gain, &mut out);
    out
}
