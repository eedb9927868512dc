//! Single-window inference latency: front-end plus forward pass, timed on
//! one thread with a monotonic clock.

use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::model::{ModelConfig, ModelParams, Workspace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub iters: usize,
    pub warmup: usize,
    pub window_len: usize,
    /// Seed of the synthetic input window.
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            iters: 1000,
            warmup: 100,
            window_len: crate::data::WINDOW_LEN,
            seed: 0,
        }
    }
}

/// Durations in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub p50: f64,
    pub p95: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub n_iters: usize,
    pub warmup_iters: usize,
    /// Mean time of the front-end alone.
    pub fas_mean: f64,
    /// Mean time of the forward pass alone.
    pub forward_mean: f64,
    pub window_len: usize,
    pub threads: usize,
    pub width: String,
    pub model: ModelConfig,
}

pub const TSV_HEADER: &str = "p50_ms\tp95_ms\tmean_ms\tmin_ms\tmax_ms\tn_iters";

impl LatencyStats {
    pub fn tsv_row(&self) -> String {
        format!(
            "{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}",
            self.p50, self.p95, self.mean, self.min, self.max, self.n_iters
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

/// Nearest-rank percentile of ascending `sorted`, `q` in (0, 100].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Deterministic window shaped like the generator's normal class.
pub fn bench_window(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|t| 1.7 + 0.2 * (t as f64 * 0.0314).sin() + rng.random_range(-0.05..0.05))
        .collect()
}

/// Times `iters` single-window inferences after `warmup` untimed ones.
pub fn bench_inference(p: &ModelParams, cfg: &BenchConfig) -> Result<LatencyStats> {
    ensure!(cfg.iters >= 1, InvalidArgument, "iters must be >= 1");
    p.config.seq_len(cfg.window_len)?;
    let window = bench_window(cfg.window_len, cfg.seed);
    let mut ws = Workspace::new();
    for _ in 0..cfg.warmup {
        black_box(ws.infer_window(p, black_box(&window))?);
    }
    let mut totals = Vec::with_capacity(cfg.iters);
    let (mut fas_sum, mut fwd_sum) = (0.0, 0.0);
    for _ in 0..cfg.iters {
        let t0 = Instant::now();
        ws.prepare(p, black_box(&window))?;
        let t1 = Instant::now();
        black_box(ws.forward_prepared(p)?);
        let t2 = Instant::now();
        let fas = (t1 - t0).as_secs_f64() * 1e3;
        let fwd = (t2 - t1).as_secs_f64() * 1e3;
        fas_sum += fas;
        fwd_sum += fwd;
        totals.push((t2 - t0).as_secs_f64() * 1e3);
    }
    let n = cfg.iters as f64;
    let mean = totals.iter().sum::<f64>() / n;
    totals.sort_by(f64::total_cmp);
    Ok(LatencyStats {
        p50: percentile(&totals, 50.0),
        p95: percentile(&totals, 95.0),
        mean,
        min: totals[0],
        max: totals[totals.len() - 1],
        n_iters: cfg.iters,
        warmup_iters: cfg.warmup,
        fas_mean: fas_sum / n,
        forward_mean: fwd_sum / n,
        window_len: cfg.window_len,
        threads: 1,
        width: "f64".into(),
        model: p.config.clone(),
    })
}
