//! Block-level forward and backward kernels over row-major `rows × width`
//! buffers, where `rows = batch · seq_len`.

use super::{BlockParams, ModelConfig, RMS_EPS};
use crate::error::{ensure, Result};
use crate::linalg::{add_row_bias, col_sums_acc, gemm, matmul_acc_small, sigmoid, silu, silu_grad};
use crate::ssm::{scan_kernel, scan_kernel_backward, ScanGrads, ScanInputs};

/// Matrix-product backend. `Small` never allocates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kernel {
    Packed,
    Small,
}

/// `out = x · w (+ bias)`, with `x` `rows × k` and `w` `k × n`.
pub(crate) fn linear(kernel: Kernel, rows: usize, k: usize, n: usize, x: &[f64], w: &[f64], bias: Option<&[f64]>, out: &mut [f64]) {
    match kernel {
        Kernel::Packed => gemm(rows, k, n, x, false, w, false, 0.0, out),
        Kernel::Small => {
            out.iter_mut().for_each(|v| *v = 0.0);
            matmul_acc_small(rows, k, n, x, w, out);
        }
    }
    if let Some(b) = bias {
        add_row_bias(out, b);
    }
}

pub(crate) fn rmsnorm_row(x: &[f64], gain: &[f64], out: &mut [f64]) -> f64 {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + RMS_EPS).sqrt();
    for ((o, &v), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = v * inv * g;
    }
    inv
}

pub(crate) fn rmsnorm_rows(x: &[f64], gain: &[f64], out: &mut [f64], inv_rms: &mut [f64]) {
    let d = gain.len();
    for ((xr, or), inv) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)).zip(inv_rms.iter_mut()) {
        *inv = rmsnorm_row(xr, gain, or);
    }
}

/// Accumulates RMSNorm input gradients into `dx` and gain gradients into `dgain`.
pub(crate) fn rmsnorm_rows_backward(x: &[f64], gain: &[f64], inv_rms: &[f64], dout: &[f64], dx: &mut [f64], dgain: &mut [f64]) {
    let d = gain.len();
    for (((xr, dor), dxr), &r) in x
        .chunks_exact(d)
        .zip(dout.chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
        .zip(inv_rms)
    {
        let mut dot = 0.0;
        for i in 0..d {
            dot += dor[i] * gain[i] * xr[i];
            dgain[i] += dor[i] * xr[i] * r;
        }
        let coef = r * r * r * dot / d as f64;
        for i in 0..d {
            dxr[i] += r * gain[i] * dor[i] - coef * xr[i];
        }
    }
}

/// Intermediates of one block for a batch of equal-length sequences.
#[derive(Debug, Default, Clone)]
pub(crate) struct BlockBuffers {
    pub x_in: Vec<f64>,
    pub inv_rms: Vec<f64>,
    pub xn: Vec<f64>,
    pub xz: Vec<f64>,
    pub conv: Vec<f64>,
    pub u: Vec<f64>,
    pub delta_pre: Vec<f64>,
    pub delta: Vec<f64>,
    pub bm: Vec<f64>,
    pub cm: Vec<f64>,
    pub y: Vec<f64>,
    pub o: Vec<f64>,
    pub out: Vec<f64>,
    pub h: Vec<f64>,
    pub taps: Vec<f64>,
}

fn sized(v: &mut Vec<f64>, len: usize) -> &mut [f64] {
    v.resize(len, 0.0);
    &mut v[..]
}

/// Depthwise causal convolution of the first `di` columns of each
/// `xz` row (row stride `2·di`), left-padded with zeros per sequence.
/// `taps` is scratch for the kernel transposed to `width × di`.
#[allow(clippy::too_many_arguments)]
fn causal_conv(
    xz: &[f64],
    conv_w: &[f64],
    batch: usize,
    len: usize,
    di: usize,
    width: usize,
    taps: &mut Vec<f64>,
    out: &mut [f64],
) {
    let taps = sized(taps, width * di);
    for d in 0..di {
        for k in 0..width {
            taps[k * di + d] = conv_w[d * width + k];
        }
    }
    let stride = 2 * di;
    for b in 0..batch {
        for t in 0..len {
            let orow = &mut out[(b * len + t) * di..(b * len + t + 1) * di];
            orow.iter_mut().for_each(|v| *v = 0.0);
            for (k, tap) in taps.chunks_exact(di).enumerate() {
                // tap k reads step t − (width − 1) + k
                let Some(src) = (t + k + 1).checked_sub(width) else {
                    continue;
                };
                let xrow = &xz[(b * len + src) * stride..(b * len + src) * stride + di];
                for ((o, &w), &x) in orow.iter_mut().zip(tap).zip(xrow) {
                    *o += w * x;
                }
            }
        }
    }
}

/// Runs `p` on the residual stream `x` (`batch·len × d_model`) and leaves
/// the block output in `buf.out`. With `prenorm` the block's RMSNorm is
/// applied first; otherwise `x` is taken as already normalized. The residual
/// add is the caller's.
#[allow(clippy::too_many_arguments)]
pub(crate) fn block_forward_into(
    p: &BlockParams,
    cfg: &ModelConfig,
    x: &[f64],
    batch: usize,
    len: usize,
    buf: &mut BlockBuffers,
    kernel: Kernel,
    prenorm: bool,
) {
    let (d, di, n) = (cfg.d_model, cfg.d_inner(), cfg.n_state);
    let rows = batch * len;

    buf.x_in.clear();
    buf.x_in.extend_from_slice(x);
    if prenorm {
        rmsnorm_rows(x, &p.norm_gain, sized(&mut buf.xn, rows * d), sized(&mut buf.inv_rms, rows));
    } else {
        buf.xn.clear();
        buf.xn.extend_from_slice(x);
    }

    linear(kernel, rows, d, 2 * di, &buf.xn, &p.w_in, Some(&p.b_in), sized(&mut buf.xz, rows * 2 * di));
    causal_conv(
        &buf.xz,
        &p.conv_w,
        batch,
        len,
        di,
        cfg.conv_width,
        &mut buf.taps,
        sized(&mut buf.conv, rows * di),
    );
    let u = sized(&mut buf.u, rows * di);
    for (u, &c) in u.iter_mut().zip(&buf.conv) {
        *u = silu(c);
    }

    let sel = &p.selective;
    linear(kernel, rows, di, di, &buf.u, &sel.w_delta, Some(&sel.b_delta), sized(&mut buf.delta_pre, rows * di));
    let delta = sized(&mut buf.delta, rows * di);
    for (dl, &pre) in delta.iter_mut().zip(&buf.delta_pre) {
        *dl = crate::linalg::softplus(pre);
    }
    linear(kernel, rows, di, n, &buf.u, &sel.w_b, None, sized(&mut buf.bm, rows * n));
    linear(kernel, rows, di, n, &buf.u, &sel.w_c, None, sized(&mut buf.cm, rows * n));

    let mut a_diag = [0.0f64; 64];
    let a_diag_vec;
    let a_diag: &[f64] = if n <= a_diag.len() {
        for (a, l) in a_diag.iter_mut().zip(&sel.a_log) {
            *a = -l.exp();
        }
        &a_diag[..n]
    } else {
        a_diag_vec = sel.a_diag();
        &a_diag_vec
    };

    sized(&mut buf.y, rows * di);
    sized(&mut buf.h, di * n);
    for b in 0..batch {
        let r = b * len * di..(b + 1) * len * di;
        let rn = b * len * n..(b + 1) * len * n;
        scan_kernel(
            ScanInputs {
                u: &buf.u[r.clone()],
                delta: &buf.delta[r.clone()],
                bm: &buf.bm[rn.clone()],
                cm: &buf.cm[rn],
                a_diag,
                len,
                d_inner: di,
                n_state: n,
            },
            &mut buf.h,
            &mut buf.y[r],
            None,
        );
    }

    let o = sized(&mut buf.o, rows * di);
    for ((orow, yrow), xzrow) in o.chunks_exact_mut(di).zip(buf.y.chunks_exact(di)).zip(buf.xz.chunks_exact(2 * di)) {
        for ((ov, &yv), &z) in orow.iter_mut().zip(yrow).zip(&xzrow[di..]) {
            *ov = yv * silu(z);
        }
    }
    linear(kernel, rows, di, d, &buf.o, &p.w_out, Some(&p.b_out), sized(&mut buf.out, rows * d));
}

/// Gated SSM block on one sequence. `x` is `len × d_model` and already
/// normalized by the caller (`rmsnorm` with `p.norm_gain`); the returned
/// `len × d_model` output excludes the residual.
pub fn block_forward(p: &BlockParams, cfg: &ModelConfig, x: &[f64], len: usize) -> Result<Vec<f64>> {
    ensure!(len >= 1, Shape, "sequence length must be >= 1");
    ensure!(x.len() == len * cfg.d_model, Shape, "input has {} entries, expected {len}×{}", x.len(), cfg.d_model);
    let mut buf = BlockBuffers::default();
    block_forward_into(p, cfg, x, 1, len, &mut buf, Kernel::Packed, false);
    Ok(buf.out)
}

/// Scratch space for the block backward pass.
#[derive(Debug, Default)]
pub(crate) struct BackwardScratch {
    d_o: Vec<f64>,
    dy: Vec<f64>,
    dxz: Vec<f64>,
    du: Vec<f64>,
    ddelta: Vec<f64>,
    dbm: Vec<f64>,
    dcm: Vec<f64>,
    dxn: Vec<f64>,
    decays: Vec<f64>,
    states: Vec<f64>,
    gh: Vec<f64>,
    da: Vec<f64>,
}

/// Backpropagates `dout` (gradient of the block output, `rows × d_model`)
/// through the block. Parameter gradients accumulate into `g`; the input
/// gradient accumulates into `dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn block_backward(
    p: &BlockParams,
    cfg: &ModelConfig,
    buf: &BlockBuffers,
    batch: usize,
    len: usize,
    dout: &[f64],
    g: &mut BlockParams,
    dx: &mut [f64],
    s: &mut BackwardScratch,
) {
    let (d, di, n, width) = (cfg.d_model, cfg.d_inner(), cfg.n_state, cfg.conv_width);
    let rows = batch * len;

    // out = o · w_out + b_out
    gemm(di, rows, d, &buf.o, true, dout, false, 1.0, &mut g.w_out);
    col_sums_acc(dout, d, &mut g.b_out);
    let d_o = sized(&mut s.d_o, rows * di);
    gemm(rows, d, di, dout, false, &p.w_out, true, 0.0, d_o);

    // o = y ⊙ silu(z)
    let dy = sized(&mut s.dy, rows * di);
    let dxz = sized(&mut s.dxz, rows * 2 * di);
    for r in 0..rows {
        let zrow = &buf.xz[r * 2 * di + di..(r + 1) * 2 * di];
        for j in 0..di {
            let idx = r * di + j;
            let z = zrow[j];
            dy[idx] = s.d_o[idx] * silu(z);
            dxz[r * 2 * di + di + j] = s.d_o[idx] * buf.y[idx] * silu_grad(z);
        }
    }

    // selective scan, one sequence at a time
    let sel = &p.selective;
    let a_diag = sel.a_diag();
    let du = sized(&mut s.du, rows * di);
    du.iter_mut().for_each(|v| *v = 0.0);
    let ddelta = sized(&mut s.ddelta, rows * di);
    ddelta.iter_mut().for_each(|v| *v = 0.0);
    let dbm = sized(&mut s.dbm, rows * n);
    dbm.iter_mut().for_each(|v| *v = 0.0);
    let dcm = sized(&mut s.dcm, rows * n);
    dcm.iter_mut().for_each(|v| *v = 0.0);
    let da = sized(&mut s.da, n);
    da.iter_mut().for_each(|v| *v = 0.0);
    sized(&mut s.decays, len * di * n);
    sized(&mut s.states, len * di * n);
    sized(&mut s.gh, di * n);
    let mut h = vec![0.0; di * n];
    let mut y_scratch = vec![0.0; len * di];
    for b in 0..batch {
        let r = b * len * di..(b + 1) * len * di;
        let rn = b * len * n..(b + 1) * len * n;
        let inputs = ScanInputs {
            u: &buf.u[r.clone()],
            delta: &buf.delta[r.clone()],
            bm: &buf.bm[rn.clone()],
            cm: &buf.cm[rn.clone()],
            a_diag: &a_diag,
            len,
            d_inner: di,
            n_state: n,
        };
        scan_kernel(inputs, &mut h, &mut y_scratch, Some((&mut s.decays, &mut s.states)));
        scan_kernel_backward(
            inputs,
            &s.decays,
            &s.states,
            &s.dy[r.clone()],
            &mut s.gh,
            ScanGrads {
                du: &mut s.du[r.clone()],
                ddelta: &mut s.ddelta[r],
                dbm: &mut s.dbm[rn.clone()],
                dcm: &mut s.dcm[rn],
                da: &mut s.da,
            },
        );
    }
    for ((ga, &da), &a) in g.selective.a_log.iter_mut().zip(&s.da).zip(&a_diag) {
        // a = −exp(a_log)
        *ga += da * a;
    }

    // delta = softplus(u · w_delta + b_delta)
    for (dd, &pre) in s.ddelta.iter_mut().zip(&buf.delta_pre) {
        *dd *= sigmoid(pre);
    }
    gemm(di, rows, di, &buf.u, true, &s.ddelta, false, 1.0, &mut g.selective.w_delta);
    col_sums_acc(&s.ddelta, di, &mut g.selective.b_delta);
    gemm(rows, di, di, &s.ddelta, false, &sel.w_delta, true, 1.0, &mut s.du);
    gemm(di, rows, n, &buf.u, true, &s.dbm, false, 1.0, &mut g.selective.w_b);
    gemm(rows, n, di, &s.dbm, false, &sel.w_b, true, 1.0, &mut s.du);
    gemm(di, rows, n, &buf.u, true, &s.dcm, false, 1.0, &mut g.selective.w_c);
    gemm(rows, n, di, &s.dcm, false, &sel.w_c, true, 1.0, &mut s.du);

    // u = silu(conv); conv = causal depthwise conv of x1
    for (du, &c) in s.du.iter_mut().zip(&buf.conv) {
        *du *= silu_grad(c);
    }
    let stride = 2 * di;
    for r in 0..rows {
        s.dxz[r * stride..r * stride + di].iter_mut().for_each(|v| *v = 0.0);
    }
    for b in 0..batch {
        for t in 0..len {
            let dc = &s.du[(b * len + t) * di..(b * len + t + 1) * di];
            for k in 0..width {
                let Some(src) = (t + k + 1).checked_sub(width) else {
                    continue;
                };
                let base = (b * len + src) * stride;
                for j in 0..di {
                    g.conv_w[j * width + k] += dc[j] * buf.xz[base + j];
                    s.dxz[base + j] += dc[j] * p.conv_w[j * width + k];
                }
            }
        }
    }

    // xz = xn · w_in + b_in
    gemm(d, rows, 2 * di, &buf.xn, true, &s.dxz, false, 1.0, &mut g.w_in);
    col_sums_acc(&s.dxz, 2 * di, &mut g.b_in);
    let dxn = sized(&mut s.dxn, rows * d);
    gemm(rows, 2 * di, d, &s.dxz, false, &p.w_in, true, 0.0, dxn);

    rmsnorm_rows_backward(&buf.x_in, &p.norm_gain, &buf.inv_rms, &s.dxn, dx, &mut g.norm_gain);
}
