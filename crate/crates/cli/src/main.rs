use std::path::PathBuf;
use std::process::ExitCode;

use arcflux::model::{Frontend, HeadKind};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod error;

use config::{Grid, RunConfig};
use error::{exit, CliError};

#[derive(Parser, Debug)]
#[command(name = "arcflux", version, about = "Arc fault detection with selective state-space models")]
struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides every seed in the configuration (data, split, training, bench).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate and split a synthetic dataset.
    Generate(GenerateArgs),
    /// Train a model and save the best checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Train and evaluate one model per grid cell.
    Sweep(SweepArgs),
    /// Time single-window inference.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_per_class: Option<usize>,
    #[arg(long)]
    window_len: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct ModelOverrides {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long, value_enum)]
    head: Option<HeadArg>,
    #[arg(long, value_enum)]
    frontend: Option<FrontendArg>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    report_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[command(flatten)]
    model: ModelOverrides,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    report_dir: Option<PathBuf>,
    /// Also time this many single-window inferences and attach the latency.
    #[arg(long)]
    latency_iters: Option<usize>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, value_enum)]
    grid: Option<Grid>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    report_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    bench_iters: Option<usize>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Benchmark a freshly initialized model from the config instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    random_init: bool,
    #[arg(long)]
    report_dir: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[command(flatten)]
    model: ModelOverrides,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum HeadArg {
    LinearLast,
    LinearDropout,
    Mlp,
    MeanPoolLinear,
}

impl From<HeadArg> for HeadKind {
    fn from(h: HeadArg) -> Self {
        match h {
            HeadArg::LinearLast => HeadKind::LinearLast,
            HeadArg::LinearDropout => HeadKind::LinearDropout,
            HeadArg::Mlp => HeadKind::Mlp,
            HeadArg::MeanPoolLinear => HeadKind::MeanPoolLinear,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FrontendArg {
    Fas,
    Raw,
}

impl From<FrontendArg> for Frontend {
    fn from(f: FrontendArg) -> Self {
        match f {
            FrontendArg::Fas => Frontend::Fas,
            FrontendArg::Raw => Frontend::Raw,
        }
    }
}

impl ModelOverrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(k) = self.k {
            cfg.model.k_fas = k;
        }
        if let Some(b) = self.blocks {
            cfg.model.n_blocks = b;
        }
        if let Some(h) = self.head {
            cfg.model.head_kind = h.into();
        }
        if let Some(f) = self.frontend {
            cfg.model.frontend = f.into();
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.generate.seed = s;
        cfg.split.seed = s;
        cfg.train.seed = s;
        cfg.bench.seed = s;
    }
    match &cli.command {
        Command::Generate(a) => {
            set(&mut cfg.paths.dataset, a.out.clone());
            set(&mut cfg.generate.n_per_class, a.n_per_class);
            set(&mut cfg.generate.window_len, a.window_len);
        }
        Command::Train(a) => {
            set(&mut cfg.paths.dataset, a.dataset.clone());
            set(&mut cfg.paths.checkpoint, a.checkpoint.clone());
            set(&mut cfg.paths.report_dir, a.report_dir.clone());
            set(&mut cfg.train.epochs, a.epochs);
            a.model.apply(&mut cfg);
        }
        Command::Eval(a) => {
            set(&mut cfg.paths.checkpoint, a.checkpoint.clone());
            set(&mut cfg.paths.dataset, a.dataset.clone());
            set(&mut cfg.paths.report_dir, a.report_dir.clone());
        }
        Command::Sweep(a) => {
            set(&mut cfg.sweep.grid, a.grid);
            set(&mut cfg.paths.dataset, a.dataset.clone());
            set(&mut cfg.paths.report_dir, a.report_dir.clone());
            set(&mut cfg.train.epochs, a.epochs);
            set(&mut cfg.sweep.bench_iters, a.bench_iters);
        }
        Command::Bench(a) => {
            set(&mut cfg.paths.checkpoint, a.checkpoint.clone());
            set(&mut cfg.paths.report_dir, a.report_dir.clone());
            set(&mut cfg.bench.iters, a.iters);
            set(&mut cfg.bench.warmup, a.warmup);
            a.model.apply(&mut cfg);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    let force = cli.force;
    match cli.command {
        Command::Generate(_) => commands::generate(&cfg, force),
        Command::Train(_) => commands::train(&cfg, force),
        Command::Eval(a) => commands::eval(&cfg, a.latency_iters),
        Command::Sweep(_) => commands::sweep(&cfg, force),
        Command::Bench(a) => commands::bench(&cfg, a.random_init),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("arcflux: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
