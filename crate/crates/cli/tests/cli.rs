use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use arcflux::data::read_manifest;
use arcflux::model::load_checkpoint;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_arcflux"))
}

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    /// Smoke-sized configuration rooted in a fresh temp dir, plus `extra`
    /// appended verbatim.
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let cfg = format!(
            r#"
[paths]
dataset = "{root}/data"
checkpoint = "{root}/model.ckpt"
report_dir = "{root}/reports"

[generate]
n_per_class = 400
window_len = 256

[model]
d_model = 16
n_state = 4
n_blocks = 2
k_fas = 16

[train]
epochs = 2
batch_size = 32
lr = 1e-2

[bench]
iters = 30
warmup = 5
window_len = 256
{extra}
"#,
            root = dir.path().display()
        );
        fs::write(dir.path().join("run.toml"), cfg).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn cmd(&self, args: &[&str]) -> Output {
        let cfg = self.path("run.toml");
        bin().arg("--config").arg(&cfg).args(args).output().unwrap()
    }
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{stdout}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn sha(dir: &Path) -> String {
    read_manifest(dir).unwrap().sha256
}

#[test]
fn generate_is_deterministic_per_seed() {
    let run = Run::new("");
    ok(&run.cmd(&["--seed", "7", "generate"]));
    let first = sha(&run.path("data"));
    let m = read_manifest(run.path("data")).unwrap();
    assert_eq!((m.counts.train.normal + m.counts.val.normal + m.counts.test.normal), 400);
    assert_eq!((m.counts.train.arc + m.counts.val.arc + m.counts.test.arc), 400);

    let refused = run.cmd(&["--seed", "7", "generate"]);
    assert_eq!(refused.status.code(), Some(1));
    assert!(stderr(&refused).contains("--force"));

    ok(&run.cmd(&["--seed", "7", "--force", "generate"]));
    assert_eq!(sha(&run.path("data")), first);
    ok(&run.cmd(&["--seed", "8", "--force", "generate"]));
    assert_ne!(sha(&run.path("data")), first);
}

#[test]
fn unknown_config_key_is_named() {
    let run = Run::new("");
    fs::write(run.path("run.toml"), "[train]\nepoch = 3\n").unwrap();
    let out = run.cmd(&["generate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("epoch"), "{}", stderr(&out));
    assert!(!run.path("data").exists());
}

#[test]
fn invalid_values_are_config_errors() {
    let run = Run::new("[split]\nratio_train = 1.5\n");
    let out = run.cmd(&["generate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("ratio_train"));
}

#[test]
fn smoke_train_then_eval() {
    let run = Run::new("");
    ok(&run.cmd(&["generate"]));
    let t0 = Instant::now();
    let stdout = ok(&run.cmd(&["train"]));
    assert!(t0.elapsed().as_secs_f64() < 60.0);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("epoch")).count(), 2);

    let history = fs::read_to_string(run.path("reports/history.tsv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 2);

    let ckpt_bytes = fs::read(run.path("model.ckpt")).unwrap();
    let refused = run.cmd(&["train"]);
    assert_eq!(refused.status.code(), Some(1));
    assert_eq!(fs::read(run.path("model.ckpt")).unwrap(), ckpt_bytes);

    let stdout = ok(&run.cmd(&["eval"]));
    assert!(stdout.contains("matches the value recorded"), "{stdout}");
    assert!(stdout.contains("predicted:"));
    let ckpt = load_checkpoint(run.path("model.ckpt")).unwrap();
    let saved = ckpt.meta["test_accuracy"].as_f64().unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.path("reports/eval.json")).unwrap()).unwrap();
    assert_eq!(json["accuracy"].as_f64().unwrap().to_bits(), saved.to_bits());
    assert!(run.path("reports/eval.txt").exists());
    assert!(run.path("reports/eval.tsv").exists());

    // Same seed, same bytes.
    ok(&run.cmd(&["--force", "train"]));
    assert_eq!(fs::read(run.path("model.ckpt")).unwrap(), ckpt_bytes);
}

#[test]
fn eval_with_mismatched_k_names_both_values() {
    let run = Run::new("");
    ok(&run.cmd(&["generate"]));
    ok(&run.cmd(&["train", "--epochs", "1"]));
    ok(&run.cmd(&["--force", "generate", "--window-len", "24", "--n-per-class", "20"]));
    let out = run.cmd(&["eval"]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr(&out);
    assert!(err.contains("k_fas = 16") && err.contains("24"), "{err}");
}

#[test]
fn corrupted_dataset_is_a_data_error() {
    let run = Run::new("");
    ok(&run.cmd(&["generate"]));
    let blob = run.path("data/windows.bin");
    let mut bytes = fs::read(&blob).unwrap();
    bytes[100] ^= 1;
    fs::write(&blob, bytes).unwrap();
    let out = run.cmd(&["train"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("checksum"));
}

#[test]
fn diverging_training_is_a_numerical_failure() {
    let run = Run::new("");
    ok(&run.cmd(&["generate"]));
    fs::write(
        run.path("run.toml"),
        fs::read_to_string(run.path("run.toml")).unwrap().replace("lr = 1e-2", "lr = 1e300\nclip_norm = 0.0"),
    )
    .unwrap();
    let out = run.cmd(&["train"]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite"));
}

#[test]
fn bench_reports_ordered_stats() {
    let run = Run::new("");
    let stdout = ok(&run.cmd(&["bench", "--random-init"]));
    assert!(stdout.contains("1.87 ms"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.path("reports/bench.json")).unwrap()).unwrap();
    let f = |k: &str| json[k].as_f64().unwrap();
    assert!(f("min") <= f("p50") && f("p50") <= f("p95") && f("p95") <= f("max"));
    assert_eq!(json["n_iters"], 30);
    assert_eq!(json["window_len"], 256);
    assert_eq!(fs::read_to_string(run.path("reports/bench.tsv")).unwrap().lines().count(), 2);
}

fn sweep_rows(run: &Run, grid: &str) -> Vec<String> {
    fs::read_to_string(run.path(&format!("reports/sweep-{grid}.tsv")))
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn sweep_blocks_is_resumable() {
    let run = Run::new("[sweep]\nblocks = [1, 2, 3, 4]\nbench_iters = 5\n");
    ok(&run.cmd(&["generate", "--n-per-class", "40"]));
    let first = ok(&run.cmd(&["sweep", "--grid", "blocks", "--epochs", "1"]));
    assert_eq!(first.matches(": training").count(), 4);
    let rows = sweep_rows(&run, "blocks");
    assert_eq!(rows.len(), 1 + 4);
    assert!(rows[0].starts_with("blocks\tprecision\trecall\tf1\taccuracy\tit_p50_ms"));

    fs::remove_file(run.path("reports/sweep-blocks/3.json")).unwrap();
    let second = ok(&run.cmd(&["sweep", "--grid", "blocks", "--epochs", "1"]));
    assert_eq!(second.matches("skipping").count(), 3);
    assert_eq!(second.matches(": training").count(), 1);
    let again = sweep_rows(&run, "blocks");
    for i in [1, 2, 4] {
        assert_eq!(again[i], rows[i]);
    }
    // Retraining the removed cell is deterministic; only its latency moves.
    let acc = |r: &str| r.split('\t').take(5).collect::<Vec<_>>().join("\t");
    assert_eq!(acc(&again[3]), acc(&rows[3]));
}

#[test]
fn sweep_k_rows_follow_the_grid() {
    let run = Run::new("[sweep]\nk = [4, 8]\nbench_iters = 5\n");
    ok(&run.cmd(&["generate", "--n-per-class", "40"]));
    ok(&run.cmd(&["sweep", "--epochs", "1"]));
    let rows = sweep_rows(&run, "k");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("4\t") && rows[2].starts_with("8\t"));
}
