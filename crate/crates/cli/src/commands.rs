use std::fs;
use std::path::{Path, PathBuf};

use arcflux::bench::{bench_inference, BenchConfig, LatencyStats};
use arcflux::data::{generate as gen_windows, load_dataset, save_dataset, split, Dataset, SplitSpec};
use arcflux::metrics::{self, confusion, report, EvalReport};
use arcflux::model::{init_params, load_checkpoint, save_checkpoint, Checkpoint, ModelConfig, ModelParams};
use arcflux::train::{evaluate, fit, format_epoch_line, write_history, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{Grid, RunConfig};
use crate::error::{io_error, CliError};

/// Single-window GPU latency the architecture was originally reported at.
const REFERENCE_GPU_MS: f64 = 1.87;

fn refuse_overwrite(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::Other(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

pub fn generate(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let dir = &cfg.paths.dataset;
    refuse_overwrite(&dir.join("manifest.json"), force)?;
    let windows = gen_windows(&cfg.generate)?;
    let ds = split(windows, cfg.split.ratio_train, cfg.split.seed)?;
    let spec = SplitSpec {
        ratio_train: cfg.split.ratio_train,
        seed: cfg.split.seed,
    };
    let m = save_dataset(dir, &ds, &cfg.generate, spec)?;
    println!("dataset    {}", dir.display());
    println!("windows    {} x {} samples", m.records, m.window_len);
    for (name, c) in [("train", m.counts.train), ("val", m.counts.val), ("test", m.counts.test)] {
        println!("{name:<10} normal {:>5}  arc {:>5}", c.normal, c.arc);
    }
    println!("sha256     {}", m.sha256);
    Ok(())
}

fn load(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let (_, ds) = load_dataset(&cfg.paths.dataset)?;
    Ok(ds)
}

struct Trained {
    params: ModelParams,
    best_epoch: usize,
    val_acc: f64,
    test_acc: f64,
    report: EvalReport,
}

fn train_and_test(model: &ModelConfig, train: &TrainConfig, ds: &Dataset, verbose: bool) -> Result<Trained, CliError> {
    let state = fit(model, train, ds, |r| {
        if verbose {
            println!("{}", format_epoch_line(r));
        }
    })?;
    let best = state.best.expect("at least one epoch ran");
    let ev = evaluate(&best.params, &ds.test)?;
    let rep = report(&confusion(&ev.predictions, &ev.labels)?)?;
    Ok(Trained {
        params: best.params,
        best_epoch: best.epoch,
        val_acc: best.val_acc,
        test_acc: ev.accuracy(),
        report: rep,
    })
}

pub fn train(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let ckpt_path = &cfg.paths.checkpoint;
    refuse_overwrite(ckpt_path, force)?;
    let ds = load(cfg)?;
    let window_len = ds.window_len().unwrap_or(0);
    cfg.model.seq_len(window_len)?;

    let state = fit(&cfg.model, &cfg.train, &ds, |r| println!("{}", format_epoch_line(r)))?;
    let best = state.best.expect("at least one epoch ran");
    let ev = evaluate(&best.params, &ds.test)?;
    let test_acc = ev.accuracy();

    let mut ckpt = Checkpoint::new(best.params);
    ckpt.meta.insert("best_epoch".into(), json!(best.epoch));
    ckpt.meta.insert("val_accuracy".into(), json!(best.val_acc));
    ckpt.meta.insert("test_accuracy".into(), json!(test_acc));
    ckpt.meta.insert("window_len".into(), json!(window_len));
    ckpt.meta.insert("train".into(), serde_json::to_value(&cfg.train).expect("train config serializes"));
    if let Some(dir) = ckpt_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    save_checkpoint(ckpt_path, &ckpt)?;

    let hist_path = cfg.paths.report_dir.join("history.tsv");
    fs::create_dir_all(&cfg.paths.report_dir).map_err(|e| io_error(&cfg.paths.report_dir, e))?;
    write_history(&hist_path, &state.history)?;
    write_file(&cfg.paths.report_dir.join("config.toml"), cfg.to_toml())?;

    println!("best epoch {}  val_acc {:.4}  test_acc {:.4}", best.epoch, best.val_acc, test_acc);
    println!("checkpoint {}", ckpt_path.display());
    println!("history    {}", hist_path.display());
    Ok(())
}

fn meta_f64(ckpt: &Checkpoint, key: &str) -> Option<f64> {
    ckpt.meta.get(key).and_then(Value::as_f64)
}

pub fn eval(cfg: &RunConfig, latency_iters: Option<usize>) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&cfg.paths.checkpoint)?;
    let ds = load(cfg)?;
    let ev = evaluate(&ckpt.params, &ds.test)?;
    let mut rep = report(&confusion(&ev.predictions, &ev.labels)?)?;
    if let Some(iters) = latency_iters {
        let bc = BenchConfig {
            iters,
            window_len: ds.window_len().unwrap_or(cfg.bench.window_len),
            ..cfg.bench.clone()
        };
        rep.latency = Some(bench_inference(&ckpt.params, &bc)?);
    }

    let dir = &cfg.paths.report_dir;
    write_file(&dir.join("eval.json"), rep.to_json())?;
    write_file(&dir.join("eval.txt"), rep.render_text())?;
    write_file(&dir.join("eval.tsv"), format!("{}\n{}\n", metrics::TSV_HEADER, rep.tsv_row()))?;

    print!("{}", rep.render_text());
    let acc = ev.accuracy();
    match meta_f64(&ckpt, "test_accuracy") {
        Some(saved) if saved.to_bits() == acc.to_bits() => {
            println!("test accuracy matches the value recorded at training time")
        }
        Some(saved) => println!("test accuracy {acc} differs from the value recorded at training time ({saved})"),
        None => {}
    }
    println!("reports    {}", dir.display());
    Ok(())
}

fn print_latency(s: &LatencyStats) {
    println!(
        "latency    p50 {:.3} ms  p95 {:.3} ms  mean {:.3} ms  (min {:.3}, max {:.3}; {} iters after {} warmup)",
        s.p50, s.p95, s.mean, s.min, s.max, s.n_iters, s.warmup_iters
    );
    println!("split      front-end {:.4} ms  forward {:.3} ms (means)", s.fas_mean, s.forward_mean);
    println!(
        "reference  {REFERENCE_GPU_MS} ms on an RTX 4090 GPU; this run: {} thread(s), {} arithmetic",
        s.threads, s.width
    );
}

pub fn bench(cfg: &RunConfig, random_init: bool) -> Result<(), CliError> {
    let mut bc = cfg.bench.clone();
    let params = if random_init {
        init_params(&cfg.model, cfg.train.seed)
    } else {
        let ckpt = load_checkpoint(&cfg.paths.checkpoint)?;
        if let Some(n) = ckpt.meta.get("window_len").and_then(Value::as_u64) {
            bc.window_len = n as usize;
        }
        ckpt.params
    };
    let stats = bench_inference(&params, &bc)?;
    let dir = &cfg.paths.report_dir;
    write_file(&dir.join("bench.json"), stats.to_json())?;
    write_file(
        &dir.join("bench.tsv"),
        format!("{}\n{}\n", arcflux::bench::TSV_HEADER, stats.tsv_row()),
    )?;
    print_latency(&stats);
    println!("reports    {}", dir.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: String,
    pub model: ModelConfig,
    pub best_epoch: usize,
    pub val_accuracy: f64,
    pub report: EvalReport,
}

fn cells(cfg: &RunConfig) -> Vec<(String, ModelConfig)> {
    let base = &cfg.model;
    match cfg.sweep.grid {
        Grid::K => (cfg.sweep.k.iter())
            .map(|&k| (k.to_string(), ModelConfig { k_fas: k, ..base.clone() }))
            .collect(),
        Grid::Blocks => (cfg.sweep.blocks.iter())
            .map(|&b| (b.to_string(), ModelConfig { n_blocks: b, ..base.clone() }))
            .collect(),
        Grid::Heads => (cfg.sweep.heads.iter())
            .map(|&h| (h.name().to_string(), ModelConfig { head_kind: h, ..base.clone() }))
            .collect(),
    }
}

pub const SWEEP_COLUMNS: &str = "precision\trecall\tf1\taccuracy\tit_p50_ms\tit_mean_ms\tbest_epoch";

pub fn sweep(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let grid = cfg.sweep.grid;
    let cell_dir: PathBuf = cfg.paths.report_dir.join(format!("sweep-{}", grid.name()));
    fs::create_dir_all(&cell_dir).map_err(|e| io_error(&cell_dir, e))?;
    let cells = cells(cfg);
    for (_, m) in &cells {
        m.validate()?;
    }
    let ds = load(cfg)?;
    let window_len = ds.window_len().unwrap_or(0);
    for (_, m) in &cells {
        m.seq_len(window_len)?;
    }

    let mut rows = Vec::new();
    for (name, model) in cells {
        let path = cell_dir.join(format!("{name}.json"));
        let result: CellResult = if path.exists() && !force {
            println!("{}={name}: done, skipping", grid.name());
            let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        } else {
            println!("{}={name}: training", grid.name());
            let t = train_and_test(&model, &cfg.train, &ds, true)?;
            let bc = BenchConfig {
                iters: cfg.sweep.bench_iters.max(1),
                window_len,
                ..cfg.bench.clone()
            };
            let mut rep = t.report;
            rep.latency = Some(bench_inference(&t.params, &bc)?);
            let r = CellResult {
                cell: name.clone(),
                model: t.params.config.clone(),
                best_epoch: t.best_epoch,
                val_accuracy: t.val_acc,
                report: rep,
            };
            debug_assert_eq!(t.test_acc.to_bits(), r.report.accuracy.to_bits());
            write_file(&path, serde_json::to_string_pretty(&r).expect("cell serializes"))?;
            r
        };
        rows.push(result);
    }

    let mut table = format!("{}\t{SWEEP_COLUMNS}\n", grid.name());
    for r in &rows {
        let rep = &r.report;
        let (p50, mean) = rep.latency.as_ref().map_or((f64::NAN, f64::NAN), |l| (l.p50, l.mean));
        table.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.4}\t{:.4}\t{}\n",
            r.cell, rep.precision, rep.recall, rep.f1, rep.accuracy, p50, mean, r.best_epoch
        ));
    }
    let out = cfg.paths.report_dir.join(format!("sweep-{}.tsv", grid.name()));
    write_file(&out, &table)?;
    print!("{table}");
    println!("table      {}", out.display());
    Ok(())
}
