use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    block_backward, block_forward_into, linear, rmsnorm_rows, rmsnorm_rows_backward, BackwardScratch, BlockBuffers, Kernel,
};
use super::{HeadKind, ModelParams};
use crate::error::{ensure, Result};
use crate::fas::FasFeatures;
use crate::linalg::{col_sums_acc, gemm};

/// Forward-pass mode. Dropout is only active in `Train`.
pub enum Mode<'a> {
    Eval,
    Train { rng: &'a mut ChaCha8Rng },
}

/// Everything the backward pass needs from a batched forward pass.
pub struct Tape {
    batch: usize,
    len: usize,
    scalars: Vec<f64>,
    blocks: Vec<BlockBuffers>,
    x_final: Vec<f64>,
    inv_rms_final: Vec<f64>,
    /// Dropout multipliers (0 or 1/(1−p)), present only in training mode.
    mask: Option<Vec<f64>>,
    head_x: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

fn standardize(p: &ModelParams, s: f64) -> f64 {
    (s - p.config.input_center) * p.config.input_scale
}

fn lift(p: &ModelParams, scalars: &[f64], out: &mut [f64]) {
    let d = p.config.d_model;
    for (row, &s) in out.chunks_exact_mut(d).zip(scalars) {
        let s = standardize(p, s);
        for ((o, &w), &b) in row.iter_mut().zip(&p.lift_w).zip(&p.lift_b) {
            *o = s * w + b;
        }
    }
}

/// Picks the head input per sequence from the normalized stream.
fn pool(kind: HeadKind, xf: &[f64], batch: usize, len: usize, d: usize, out: &mut [f64]) {
    for b in 0..batch {
        let o = &mut out[b * d..(b + 1) * d];
        let seq = &xf[b * len * d..(b + 1) * len * d];
        match kind {
            HeadKind::MeanPoolLinear => {
                o.iter_mut().for_each(|v| *v = 0.0);
                col_sums_acc(seq, d, o);
                o.iter_mut().for_each(|v| *v /= len as f64);
            }
            _ => o.copy_from_slice(&seq[(len - 1) * d..]),
        }
    }
}

struct HeadOut<'a> {
    head_x: &'a mut Vec<f64>,
    hidden_pre: &'a mut Vec<f64>,
    hidden: &'a mut Vec<f64>,
}

fn head_forward(p: &ModelParams, kernel: Kernel, pooled: &[f64], mask: Option<&[f64]>, batch: usize, bufs: HeadOut<'_>, logits: &mut [f64]) {
    let d = p.config.d_model;
    bufs.head_x.clear();
    bufs.head_x.extend_from_slice(pooled);
    if let Some(m) = mask {
        for (x, &m) in bufs.head_x.iter_mut().zip(m) {
            *x *= m;
        }
    }
    let feat: &[f64] = match &p.head.hidden {
        Some(h) => {
            bufs.hidden_pre.resize(batch * d, 0.0);
            linear(kernel, batch, d, d, bufs.head_x, &h.w, Some(&h.b), bufs.hidden_pre);
            bufs.hidden.clear();
            bufs.hidden.extend(bufs.hidden_pre.iter().map(|&v| v.max(0.0)));
            bufs.hidden
        }
        None => bufs.head_x,
    };
    linear(kernel, batch, p.config.head_width(), 2, feat, &p.head.w, Some(&p.head.b), logits);
}

fn check_batch(p: &ModelParams, seqs: &[&[f64]]) -> Result<usize> {
    p.config.validate()?;
    ensure!(!seqs.is_empty(), InvalidArgument, "empty batch");
    let len = seqs[0].len();
    ensure!(len >= 1, Shape, "sequences must be non-empty");
    for (i, s) in seqs.iter().enumerate() {
        ensure!(s.len() == len, Shape, "ragged batch: sequence {i} has length {}, sequence 0 has {len}", s.len());
    }
    Ok(len)
}

/// Batched forward pass over equal-length input sequences, recording the
/// intermediates needed by [`backward_batch`].
pub fn forward_batch(p: &ModelParams, seqs: &[&[f64]], mode: Mode<'_>) -> Result<(Vec<[f64; 2]>, Tape)> {
    let len = check_batch(p, seqs)?;
    let cfg = &p.config;
    let d = cfg.d_model;
    let batch = seqs.len();
    let rows = batch * len;

    let scalars: Vec<f64> = seqs.iter().flat_map(|s| s.iter().copied()).collect();
    let mut x = vec![0.0; rows * d];
    lift(p, &scalars, &mut x);

    let mut blocks = Vec::with_capacity(p.blocks.len());
    for bp in &p.blocks {
        let mut buf = BlockBuffers::default();
        block_forward_into(bp, cfg, &x, batch, len, &mut buf, Kernel::Packed, true);
        for (xv, &o) in x.iter_mut().zip(&buf.out) {
            *xv += o;
        }
        buf.out = Vec::new();
        blocks.push(buf);
    }

    let mut xf = vec![0.0; rows * d];
    let mut inv_rms_final = vec![0.0; rows];
    rmsnorm_rows(&x, &p.final_norm_gain, &mut xf, &mut inv_rms_final);

    let mut pooled = vec![0.0; batch * d];
    pool(cfg.head_kind, &xf, batch, len, d, &mut pooled);

    let mask = match (mode, cfg.head_kind) {
        (Mode::Train { rng }, HeadKind::LinearDropout) if cfg.dropout_p > 0.0 => {
            let keep = 1.0 / (1.0 - cfg.dropout_p);
            Some(
                (0..batch * d)
                    .map(|_| if rng.random::<f64>() < cfg.dropout_p { 0.0 } else { keep })
                    .collect::<Vec<_>>(),
            )
        }
        _ => None,
    };

    let mut head_x = Vec::new();
    let mut hidden_pre = Vec::new();
    let mut hidden = Vec::new();
    let mut flat_logits = vec![0.0; batch * 2];
    head_forward(
        p,
        Kernel::Packed,
        &pooled,
        mask.as_deref(),
        batch,
        HeadOut {
            head_x: &mut head_x,
            hidden_pre: &mut hidden_pre,
            hidden: &mut hidden,
        },
        &mut flat_logits,
    );
    let logits = flat_logits.chunks_exact(2).map(|c| [c[0], c[1]]).collect();

    Ok((
        logits,
        Tape {
            batch,
            len,
            scalars,
            blocks,
            x_final: x,
            inv_rms_final,
            mask,
            head_x,
            hidden_pre,
            hidden,
        },
    ))
}

/// Reverse-mode gradients of `Σ_b ⟨dlogits_b, logits_b⟩` with respect to
/// every parameter, given the tape of the matching forward pass.
pub fn backward_batch(p: &ModelParams, tape: &Tape, dlogits: &[[f64; 2]]) -> Result<ModelParams> {
    ensure!(
        dlogits.len() == tape.batch,
        Shape,
        "{} logit gradients for a batch of {}",
        dlogits.len(),
        tape.batch
    );
    let cfg = &p.config;
    let (d, batch, len) = (cfg.d_model, tape.batch, tape.len);
    let rows = batch * len;
    let mut g = p.zeros_like();
    let dl: Vec<f64> = dlogits.iter().flat_map(|l| l.iter().copied()).collect();

    // head
    let feat = if p.head.hidden.is_some() { &tape.hidden } else { &tape.head_x };
    let hw = cfg.head_width();
    gemm(hw, batch, 2, feat, true, &dl, false, 1.0, &mut g.head.w);
    col_sums_acc(&dl, 2, &mut g.head.b);
    let mut dfeat = vec![0.0; batch * hw];
    gemm(batch, 2, hw, &dl, false, &p.head.w, true, 0.0, &mut dfeat);
    let mut dhead_x = match (&p.head.hidden, &mut g.head.hidden) {
        (Some(h), Some(gh)) => {
            for (df, &pre) in dfeat.iter_mut().zip(&tape.hidden_pre) {
                if pre <= 0.0 {
                    *df = 0.0;
                }
            }
            gemm(d, batch, d, &tape.head_x, true, &dfeat, false, 1.0, &mut gh.w);
            col_sums_acc(&dfeat, d, &mut gh.b);
            let mut dx = vec![0.0; batch * d];
            gemm(batch, d, d, &dfeat, false, &h.w, true, 0.0, &mut dx);
            dx
        }
        _ => dfeat,
    };
    if let Some(m) = &tape.mask {
        for (v, &m) in dhead_x.iter_mut().zip(m) {
            *v *= m;
        }
    }

    // pooling → final norm
    let mut dxf = vec![0.0; rows * d];
    for b in 0..batch {
        let dp = &dhead_x[b * d..(b + 1) * d];
        match cfg.head_kind {
            HeadKind::MeanPoolLinear => {
                let scale = 1.0 / len as f64;
                for t in 0..len {
                    let row = &mut dxf[(b * len + t) * d..(b * len + t + 1) * d];
                    for (r, &v) in row.iter_mut().zip(dp) {
                        *r = v * scale;
                    }
                }
            }
            _ => dxf[(b * len + len - 1) * d..(b * len + len) * d].copy_from_slice(dp),
        }
    }
    let mut dx = vec![0.0; rows * d];
    rmsnorm_rows_backward(
        &tape.x_final,
        &p.final_norm_gain,
        &tape.inv_rms_final,
        &dxf,
        &mut dx,
        &mut g.final_norm_gain,
    );

    // blocks, last to first; dx carries the residual stream gradient
    let mut scratch = BackwardScratch::default();
    let mut dx_in = vec![0.0; rows * d];
    for ((bp, gb), buf) in p.blocks.iter().zip(g.blocks.iter_mut()).zip(&tape.blocks).rev() {
        dx_in.copy_from_slice(&dx);
        block_backward(bp, cfg, buf, batch, len, &dx, gb, &mut dx_in, &mut scratch);
        std::mem::swap(&mut dx, &mut dx_in);
    }

    // lift
    for (row, &s) in dx.chunks_exact(d).zip(&tape.scalars) {
        let s = standardize(p, s);
        for j in 0..d {
            g.lift_w[j] += s * row[j];
            g.lift_b[j] += row[j];
        }
    }
    Ok(g)
}

/// Preallocated single-sequence inference path. After the first call for a
/// given window length, [`Workspace::infer_window`] performs no heap
/// allocation.
#[derive(Debug, Default)]
pub struct Workspace {
    fas_scratch: Vec<f64>,
    features: Vec<f64>,
    x: Vec<f64>,
    block: BlockBuffers,
    xf: Vec<f64>,
    inv_rms: Vec<f64>,
    pooled: Vec<f64>,
    head_x: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Front-end (FAS or raw copy) into the workspace's feature buffer.
    pub fn prepare(&mut self, p: &ModelParams, window: &[f64]) -> Result<()> {
        p.config.features_into(window, &mut self.fas_scratch, &mut self.features)
    }

    /// Forward pass on the features prepared by [`Workspace::prepare`].
    pub fn forward_prepared(&mut self, p: &ModelParams) -> Result<[f64; 2]> {
        let features = std::mem::take(&mut self.features);
        let out = self.forward_sequence(p, &features);
        self.features = features;
        out
    }

    /// Eval-mode logits for one raw window: front-end then forward.
    pub fn infer_window(&mut self, p: &ModelParams, window: &[f64]) -> Result<[f64; 2]> {
        self.prepare(p, window)?;
        self.forward_prepared(p)
    }

    /// Eval-mode logits for one input sequence.
    pub fn forward_sequence(&mut self, p: &ModelParams, seq: &[f64]) -> Result<[f64; 2]> {
        let cfg = &p.config;
        ensure!(!seq.is_empty(), Shape, "empty input sequence");
        let (d, len) = (cfg.d_model, seq.len());
        self.x.resize(len * d, 0.0);
        lift(p, seq, &mut self.x);
        for bp in &p.blocks {
            block_forward_into(bp, cfg, &self.x, 1, len, &mut self.block, Kernel::Small, true);
            for (xv, &o) in self.x.iter_mut().zip(&self.block.out) {
                *xv += o;
            }
        }
        self.xf.resize(len * d, 0.0);
        self.inv_rms.resize(len, 0.0);
        rmsnorm_rows(&self.x, &p.final_norm_gain, &mut self.xf, &mut self.inv_rms);
        self.pooled.resize(d, 0.0);
        pool(cfg.head_kind, &self.xf, 1, len, d, &mut self.pooled);
        let mut logits = [0.0; 2];
        head_forward(
            p,
            Kernel::Small,
            &self.pooled,
            None,
            1,
            HeadOut {
                head_x: &mut self.head_x,
                hidden_pre: &mut self.hidden_pre,
                hidden: &mut self.hidden,
            },
            &mut logits,
        );
        Ok(logits)
    }
}

/// Eval-mode logits for one FAS feature sequence.
pub fn model_forward(p: &ModelParams, features: &FasFeatures) -> Result<[f64; 2]> {
    p.config.check_features(features)?;
    Workspace::new().forward_sequence(p, &features.values)
}
