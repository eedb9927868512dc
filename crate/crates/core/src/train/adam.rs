use super::TrainConfig;
use crate::model::ModelParams;

/// First and second moment estimates, congruent with the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    /// Number of updates applied so far.
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update with learning rate `lr`.
pub fn adam_step(params: &mut ModelParams, state: &mut AdamState, grads: &ModelParams, cfg: &TrainConfig, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let slots = params
        .slots_mut()
        .into_iter()
        .zip(state.m.slots_mut())
        .zip(state.v.slots_mut())
        .zip(grads.slots());
    for (((p, m), v), g) in slots {
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    fn small() -> ModelParams {
        let cfg = ModelConfig {
            d_model: 4,
            n_state: 2,
            n_blocks: 1,
            k_fas: 4,
            ..ModelConfig::default()
        };
        init_params(&cfg, 3)
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let cfg = TrainConfig::default();
        let mut p = small();
        let before = p.clone();
        let mut st = AdamState::new(&p);
        st.m.for_each_mut(|_, t| t.iter_mut().for_each(|v| *v = 0.5));
        st.v.for_each_mut(|_, t| t.iter_mut().for_each(|v| *v = 0.25));
        let zeros = p.zeros_like();
        adam_step(&mut p, &mut st, &zeros, &cfg, 0.0);
        assert_eq!(p, before);
        assert!(st.m.flat().iter().all(|&m| m == 0.9 * 0.5));
        assert!(st.v.flat().iter().all(|&v| v == 0.999 * 0.25));
        assert_eq!(st.step, 1);

        let mut fresh = AdamState::new(&p);
        adam_step(&mut p, &mut fresh, &zeros, &cfg, 1e-3);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = TrainConfig::default();
        let mut p = small();
        let before = p.flat();
        let mut g = p.zeros_like();
        g.for_each_mut(|_, t| t.iter_mut().for_each(|v| *v = 1.0));
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &mut st, &g, &cfg, 1e-3);
        for (a, b) in p.flat().iter().zip(&before) {
            // m_hat = 1, v_hat = 1: the step is lr / (1 + eps)
            assert!(((b - a) - 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
        }
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let cfg = TrainConfig::default();
        let run = || {
            let mut p = small();
            let mut st = AdamState::new(&p);
            for step in 0..10 {
                let mut g = p.zeros_like();
                let mut i = 0.0;
                g.for_each_mut(|_, t| {
                    for v in t.iter_mut() {
                        i += 1.0;
                        *v = (i * 0.37 + step as f64).sin();
                    }
                });
                adam_step(&mut p, &mut st, &g, &cfg, 1e-3);
            }
            (p, st)
        };
        assert_eq!(run(), run());
    }
}
