use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{HeadKind, ModelConfig};
use crate::linalg::softplus_inv;
use crate::ssm::{ContinuousSsm, SelectiveParams};

/// Learnable tensors of one gated SSM block.
///
/// Weight matrices are row-major `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub norm_gain: Vec<f64>,
    pub w_in: Vec<f64>,
    pub b_in: Vec<f64>,
    /// Depthwise causal kernel, `d_inner × conv_width`; tap `conv_width − 1` hits the current step.
    pub conv_w: Vec<f64>,
    pub selective: SelectiveParams,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpHidden {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub hidden: Option<MlpHidden>,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// All learnable tensors. A zeroed copy doubles as the gradient (and Adam
/// moment) shadow.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub lift_w: Vec<f64>,
    pub lift_b: Vec<f64>,
    pub blocks: Vec<BlockParams>,
    pub final_norm_gain: Vec<f64>,
    pub head: HeadParams,
}

pub struct NamedTensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Closed-form learnable-scalar count for a configuration.
pub fn param_count_formula(cfg: &ModelConfig) -> usize {
    let (d, di, n, w) = (cfg.d_model, cfg.d_inner(), cfg.n_state, cfg.conv_width);
    let block = d + (d * 2 * di + 2 * di) + di * w + (di * di + di) + 2 * di * n + n + (di * d + d);
    let head = match cfg.head_kind {
        HeadKind::Mlp => (d * d + d) + (d * 2 + 2),
        _ => d * 2 + 2,
    };
    2 * d + cfg.n_blocks * block + d + head
}

fn uniform(rng: &mut ChaCha8Rng, len: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Seeded initialization: fan-in-scaled uniform weights, zero biases, unit
/// norm gains, `a_diag[n] = −(n+1)` and softplus(delta bias) log-uniform
/// in `[1e-3, 1e-1]`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, di, n, w) = (cfg.d_model, cfg.d_inner(), cfg.n_state, cfg.conv_width);

    // The lift bias is random so that RMSNorm of the lifted scalar keeps
    // its magnitude, not just its sign.
    let lift_w = uniform(&mut rng, d, 1);
    let lift_b = uniform(&mut rng, d, 1);

    let blocks = (0..cfg.n_blocks)
        .map(|_| {
            let w_in = uniform(&mut rng, d * 2 * di, d);
            let conv_w = uniform(&mut rng, di * w, w);
            let w_delta = uniform(&mut rng, di * di, di);
            let b_delta = (0..di)
                .map(|_| {
                    let log_dt = rng.random_range((1e-3f64).ln()..(1e-1f64).ln());
                    softplus_inv(log_dt.exp())
                })
                .collect();
            let w_b = uniform(&mut rng, di * n, di);
            let w_c = uniform(&mut rng, di * n, di);
            let w_out = uniform(&mut rng, di * d, di);
            BlockParams {
                norm_gain: vec![1.0; d],
                w_in,
                b_in: vec![0.0; 2 * di],
                conv_w,
                selective: SelectiveParams::new(di, n, w_delta, b_delta, w_b, w_c, &ContinuousSsm::default_a_diag(n))
                    .expect("shapes follow the config"),
                w_out,
                b_out: vec![0.0; d],
            }
        })
        .collect();

    let hidden = (cfg.head_kind == HeadKind::Mlp).then(|| MlpHidden {
        w: uniform(&mut rng, d * d, d),
        b: vec![0.0; d],
    });
    let head = HeadParams {
        hidden,
        w: uniform(&mut rng, cfg.head_width() * 2, cfg.head_width()),
        b: vec![0.0; 2],
    };

    ModelParams {
        config: cfg.clone(),
        lift_w,
        lift_b,
        blocks,
        final_norm_gain: vec![1.0; d],
        head,
    }
}

impl ModelParams {
    /// Same structure, every scalar zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, t| t.iter_mut().for_each(|v| *v = 0.0));
        z
    }

    fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let cfg = &self.config;
        let (d, di, n, w) = (cfg.d_model, cfg.d_inner(), cfg.n_state, cfg.conv_width);
        let mut out = vec![("lift.w".to_string(), vec![d]), ("lift.b".to_string(), vec![d])];
        for i in 0..self.blocks.len() {
            let p = |s: &str| format!("blocks.{i}.{s}");
            out.extend([
                (p("norm_gain"), vec![d]),
                (p("w_in"), vec![d, 2 * di]),
                (p("b_in"), vec![2 * di]),
                (p("conv_w"), vec![di, w]),
                (p("w_delta"), vec![di, di]),
                (p("b_delta"), vec![di]),
                (p("w_b"), vec![di, n]),
                (p("w_c"), vec![di, n]),
                (p("a_log"), vec![n]),
                (p("w_out"), vec![di, d]),
                (p("b_out"), vec![d]),
            ]);
        }
        out.push(("final_norm_gain".to_string(), vec![d]));
        if self.head.hidden.is_some() {
            out.push(("head.w_hidden".to_string(), vec![d, d]));
            out.push(("head.b_hidden".to_string(), vec![d]));
        }
        out.push(("head.w".to_string(), vec![cfg.head_width(), 2]));
        out.push(("head.b".to_string(), vec![2]));
        out
    }

    pub(crate) fn slots(&self) -> Vec<&Vec<f64>> {
        let mut v = vec![&self.lift_w, &self.lift_b];
        for b in &self.blocks {
            v.extend([
                &b.norm_gain,
                &b.w_in,
                &b.b_in,
                &b.conv_w,
                &b.selective.w_delta,
                &b.selective.b_delta,
                &b.selective.w_b,
                &b.selective.w_c,
                &b.selective.a_log,
                &b.w_out,
                &b.b_out,
            ]);
        }
        v.push(&self.final_norm_gain);
        if let Some(h) = &self.head.hidden {
            v.extend([&h.w, &h.b]);
        }
        v.extend([&self.head.w, &self.head.b]);
        v
    }

    pub(crate) fn slots_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = vec![&mut self.lift_w, &mut self.lift_b];
        for b in &mut self.blocks {
            v.extend([
                &mut b.norm_gain,
                &mut b.w_in,
                &mut b.b_in,
                &mut b.conv_w,
                &mut b.selective.w_delta,
                &mut b.selective.b_delta,
                &mut b.selective.w_b,
                &mut b.selective.w_c,
                &mut b.selective.a_log,
                &mut b.w_out,
                &mut b.b_out,
            ]);
        }
        v.push(&mut self.final_norm_gain);
        if let Some(h) = &mut self.head.hidden {
            v.extend([&mut h.w, &mut h.b]);
        }
        v.extend([&mut self.head.w, &mut self.head.b]);
        v
    }

    /// Every tensor with its name and shape, in a fixed order.
    pub fn tensors(&self) -> Vec<NamedTensor<'_>> {
        self.shapes()
            .into_iter()
            .zip(self.slots())
            .map(|((name, shape), data)| NamedTensor { name, shape, data })
            .collect()
    }

    /// Visits every tensor mutably, in the same order as [`Self::tensors`].
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        let names: Vec<String> = self.shapes().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(self.slots_mut()) {
            f(name, slot);
        }
    }

    pub(crate) fn slot_mut(&mut self, index: usize) -> &mut Vec<f64> {
        self.slots_mut().swap_remove(index)
    }

    pub fn param_count(&self) -> usize {
        self.slots().iter().map(|s| s.len()).sum()
    }

    /// Flattened copy of all scalars in tensor order.
    pub fn flat(&self) -> Vec<f64> {
        self.slots().into_iter().flat_map(|s| s.iter().copied()).collect()
    }

    pub fn global_norm(&self) -> f64 {
        self.slots()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::softplus;

    #[test]
    fn default_param_count() {
        let cfg = ModelConfig::default();
        // per block: 64 + 16384 + 256 + 512 + 16384 + 128 + 2048 + 2048 + 16 + 8192 + 64
        assert_eq!(param_count_formula(&cfg), 128 + 4 * 46_096 + 64 + 130);
        let p = init_params(&cfg, 0);
        assert_eq!(p.param_count(), param_count_formula(&cfg));
        for head_kind in HeadKind::ALL {
            for n_blocks in [0, 2, 16] {
                let cfg = ModelConfig {
                    head_kind,
                    n_blocks,
                    d_model: 8,
                    ..Default::default()
                };
                let p = init_params(&cfg, 1);
                assert_eq!(p.param_count(), param_count_formula(&cfg));
                let shaped: usize = p.tensors().iter().map(|t| t.shape.iter().product::<usize>()).sum();
                assert_eq!(shaped, p.param_count());
            }
        }
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let cfg = ModelConfig {
            d_model: 8,
            ..Default::default()
        };
        assert_eq!(init_params(&cfg, 5), init_params(&cfg, 5));
        assert_ne!(init_params(&cfg, 5).flat(), init_params(&cfg, 6).flat());
    }

    #[test]
    fn init_ranges() {
        let p = init_params(&ModelConfig::default(), 3);
        for b in &p.blocks {
            for &bd in &b.selective.b_delta {
                let dt = softplus(bd);
                assert!((1e-3 - 1e-12..=1e-1 + 1e-12).contains(&dt), "{dt}");
            }
            for (a, e) in b.selective.a_diag().iter().zip(ContinuousSsm::default_a_diag(16)) {
                assert!((a - e).abs() < 1e-12 * e.abs(), "{a} vs {e}");
            }
            let bound = 1.0 / 64f64.sqrt();
            assert!(b.w_in.iter().all(|v| v.abs() <= bound));
        }
    }
}
