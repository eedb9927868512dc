//! Synthetic current windows, windowing of long captures, stratified
//! splits, and the on-disk dataset format.
//!
//! Generated normal windows are tightly distributed around the baseline;
//! arc windows carry wider Gaussian noise plus heavy-tailed bursts. All
//! generator defaults are artifact choices; no measured noise statistics
//! stand behind them.
//!
//! # Dataset files
//!
//! A dataset directory holds `manifest.json` and `windows.bin`. The blob is a
//! sequence of fixed-width little-endian records, train then val then test:
//!
//! ```text
//! samples      window_len × f64
//! label        u8 (0 normal, 1 arc)
//! voltage_tag  u16
//! burst_rate   f64
//! phase        f64
//! seed         u64
//! ```
//!
//! The manifest records the format version, per-split class counts, the
//! generator configuration and the SHA-256 of the blob.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure, Error, Result};

/// Window length of the reference acquisition pipeline.
pub const WINDOW_LEN: usize = 1024;
pub const DATASET_VERSION: u32 = 1;
/// Share of the train portion carved out for validation.
pub const VAL_FRACTION: f64 = 0.1;

const MANIFEST_FILE: &str = "manifest.json";
const BLOB_FILE: &str = "windows.bin";
const VOLTAGE_TAGS: [u16; 4] = [100, 150, 200, 300];
const META_BYTES: usize = 2 + 8 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal = 0,
    Arc = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            0 => Ok(Label::Normal),
            1 => Ok(Label::Arc),
            other => Err(Error::InvalidArgument(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowMeta {
    pub voltage_tag: u16,
    pub burst_rate: f64,
    /// Phase of the periodic component, radians.
    pub phase: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalWindow {
    pub samples: Vec<f64>,
    pub label: Label,
    pub meta: WindowMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub n_per_class: usize,
    pub window_len: usize,
    /// Mean current, amperes.
    pub baseline: f64,
    pub periodic_amplitude: f64,
    /// Samples per cycle of the periodic component.
    pub period: usize,
    pub normal_sigma: f64,
    pub arc_sigma: f64,
    /// Per-sample probability of an arc burst.
    pub burst_rate: f64,
    pub burst_scale: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_per_class: 2000,
            window_len: WINDOW_LEN,
            baseline: 1.7,
            periodic_amplitude: 0.2,
            period: 200,
            normal_sigma: 0.02,
            arc_sigma: 0.08,
            burst_rate: 0.02,
            burst_scale: 0.25,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_per_class >= 1, InvalidArgument, "n_per_class must be >= 1");
        ensure!(self.window_len >= 1, InvalidArgument, "window_len must be >= 1");
        ensure!(self.period >= 1, InvalidArgument, "period must be >= 1");
        ensure!(self.normal_sigma >= 0.0, InvalidArgument, "normal_sigma must be >= 0");
        ensure!(
            self.arc_sigma > self.normal_sigma,
            InvalidArgument,
            "arc_sigma ({}) must exceed normal_sigma ({})",
            self.arc_sigma,
            self.normal_sigma
        );
        ensure!((0.0..=1.0).contains(&self.burst_rate), InvalidArgument, "burst_rate must be in [0, 1]");
        ensure!(self.burst_scale > 0.0, InvalidArgument, "burst_scale must be positive");
        Ok(())
    }

    /// Noise-free part of a window: baseline plus the periodic component.
    pub fn clean_sample(&self, t: usize, phase: f64) -> f64 {
        let w = std::f64::consts::TAU / self.period as f64;
        self.baseline + self.periodic_amplitude * (w * t as f64 + phase).sin()
    }
}

fn generate_window(cfg: &GenConfig, label: Label, seed: u64) -> SignalWindow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let voltage_tag = VOLTAGE_TAGS[rng.random_range(0..VOLTAGE_TAGS.len())];
    let sigma = match label {
        Label::Normal => cfg.normal_sigma,
        Label::Arc => cfg.arc_sigma,
    };
    let noise = Normal::new(0.0, sigma).expect("sigma validated");
    let samples = (0..cfg.window_len)
        .map(|t| {
            let clean = cfg.clean_sample(t, phase);
            let v = if sigma > 0.0 { clean + noise.sample(&mut rng) } else { clean };
            if label == Label::Arc && cfg.burst_rate > 0.0 && rng.random::<f64>() < cfg.burst_rate {
                // |Laplace(0, 1)| is Exp(1)
                let mag: f64 = Exp1.sample(&mut rng);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                cfg.baseline + sign * cfg.burst_scale * mag
            } else {
                v
            }
        })
        .collect();
    SignalWindow {
        samples,
        label,
        meta: WindowMeta {
            voltage_tag,
            burst_rate: if label == Label::Arc { cfg.burst_rate } else { 0.0 },
            phase,
            seed,
        },
    }
}

/// `n_per_class` normal windows followed by `n_per_class` arc windows,
/// deterministic per `cfg.seed`.
pub fn generate(cfg: &GenConfig) -> Result<Vec<SignalWindow>> {
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(2 * cfg.n_per_class);
    for label in [Label::Normal, Label::Arc] {
        for _ in 0..cfg.n_per_class {
            let seed = master.random::<u64>();
            out.push(generate_window(cfg, label, seed));
        }
    }
    Ok(out)
}

/// Consecutive non-overlapping windows of `window_len`; the remainder is dropped.
pub fn window_signal(raw: &[f64], window_len: usize) -> Result<Vec<Vec<f64>>> {
    ensure!(window_len >= 1, InvalidArgument, "window length must be >= 1");
    ensure!(
        raw.len() >= window_len,
        InvalidArgument,
        "signal has {} samples, need at least {window_len}",
        raw.len()
    );
    Ok(raw.chunks_exact(window_len).map(<[f64]>::to_vec).collect())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<SignalWindow>,
    pub val: Vec<SignalWindow>,
    pub test: Vec<SignalWindow>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub normal: usize,
    pub arc: usize,
}

impl ClassCounts {
    pub fn of(windows: &[SignalWindow]) -> Self {
        let arc = windows.iter().filter(|w| w.label == Label::Arc).count();
        Self {
            normal: windows.len() - arc,
            arc,
        }
    }

    pub fn total(&self) -> usize {
        self.normal + self.arc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: ClassCounts,
    pub val: ClassCounts,
    pub test: ClassCounts,
}

impl Dataset {
    pub fn counts(&self) -> SplitCounts {
        SplitCounts {
            train: ClassCounts::of(&self.train),
            val: ClassCounts::of(&self.val),
            test: ClassCounts::of(&self.test),
        }
    }

    pub fn window_len(&self) -> Option<usize> {
        self.train.first().map(|w| w.samples.len())
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits `total` items into parts proportional to `weights` with largest
/// remainder rounding, so each part is within one of its exact share.
fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|&w| total as f64 * w as f64 / sum as f64).collect();
    let mut parts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = total - parts.iter().sum::<usize>();
    for i in order {
        if left == 0 {
            break;
        }
        parts[i] += 1;
        left -= 1;
    }
    parts
}

/// Seeded stratified split: `ratio_train` of each class goes to the train
/// portion (rounded), the rest to test; the last [`VAL_FRACTION`] of the
/// train portion becomes validation.
pub fn split(windows: Vec<SignalWindow>, ratio_train: f64, seed: u64) -> Result<Dataset> {
    ensure!(
        ratio_train > 0.0 && ratio_train < 1.0,
        InvalidArgument,
        "ratio_train must be in (0, 1), got {ratio_train}"
    );
    let mut by_class: [Vec<SignalWindow>; 2] = [Vec::new(), Vec::new()];
    for w in windows {
        by_class[w.label.index()].push(w);
    }
    ensure!(
        by_class.iter().all(|c| !c.is_empty()),
        InvalidArgument,
        "both classes must be present (normal {}, arc {})",
        by_class[0].len(),
        by_class[1].len()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train_portion: Vec<usize> = by_class
        .iter()
        .map(|c| (ratio_train * c.len() as f64).round() as usize)
        .collect();
    let total_train: usize = train_portion.iter().sum();
    let val_counts = apportion((VAL_FRACTION * total_train as f64).round() as usize, &train_portion);

    let mut ds = Dataset::default();
    for ((mut class, n_tv), n_val) in by_class.into_iter().zip(train_portion).zip(val_counts) {
        class.shuffle(&mut rng);
        let test = class.split_off(n_tv);
        let val = class.split_off(n_tv - n_val);
        ds.train.extend(class);
        ds.val.extend(val);
        ds.test.extend(test);
    }
    ensure!(
        !ds.train.is_empty() && !ds.val.is_empty() && !ds.test.is_empty(),
        InvalidArgument,
        "split would leave a partition empty (train {}, val {}, test {})",
        ds.train.len(),
        ds.val.len(),
        ds.test.len()
    );
    ds.train.shuffle(&mut rng);
    ds.val.shuffle(&mut rng);
    ds.test.shuffle(&mut rng);
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub ratio_train: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub window_len: usize,
    pub record_bytes: usize,
    pub records: usize,
    pub counts: SplitCounts,
    pub generator: GenConfig,
    pub split: SplitSpec,
    pub blob: String,
    pub sha256: String,
}

fn record_bytes(window_len: usize) -> usize {
    window_len * 8 + 1 + META_BYTES
}

fn encode(ds: &Dataset, window_len: usize) -> Vec<u8> {
    let mut blob = Vec::with_capacity(ds.len() * record_bytes(window_len));
    for w in ds.train.iter().chain(&ds.val).chain(&ds.test) {
        for v in &w.samples {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        blob.push(w.label as u8);
        blob.extend_from_slice(&w.meta.voltage_tag.to_le_bytes());
        blob.extend_from_slice(&w.meta.burst_rate.to_le_bytes());
        blob.extend_from_slice(&w.meta.phase.to_le_bytes());
        blob.extend_from_slice(&w.meta.seed.to_le_bytes());
    }
    blob
}

fn decode_record(rec: &[u8], window_len: usize) -> Result<SignalWindow> {
    let f64_at = |off: usize| f64::from_le_bytes(rec[off..off + 8].try_into().unwrap());
    let samples: Vec<f64> = (0..window_len).map(|i| f64_at(i * 8)).collect();
    let mut off = window_len * 8;
    let label = Label::from_index(rec[off]).map_err(|e| Error::Malformed {
        what: "dataset blob",
        reason: e.to_string(),
    })?;
    off += 1;
    let voltage_tag = u16::from_le_bytes(rec[off..off + 2].try_into().unwrap());
    off += 2;
    let burst_rate = f64_at(off);
    let phase = f64_at(off + 8);
    let seed = u64::from_le_bytes(rec[off + 16..off + 24].try_into().unwrap());
    Ok(SignalWindow {
        samples,
        label,
        meta: WindowMeta {
            voltage_tag,
            burst_rate,
            phase,
            seed,
        },
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `manifest.json` and `windows.bin` into `dir` (created if needed).
pub fn save_dataset(dir: impl AsRef<Path>, ds: &Dataset, generator: &GenConfig, split: SplitSpec) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    let window_len = ds
        .window_len()
        .ok_or_else(|| Error::InvalidArgument("cannot save an empty dataset".into()))?;
    for w in ds.train.iter().chain(&ds.val).chain(&ds.test) {
        ensure!(w.samples.len() == window_len, Shape, "mixed window lengths in dataset");
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blob = encode(ds, window_len);
    let manifest = DatasetManifest {
        format_version: DATASET_VERSION,
        window_len,
        record_bytes: record_bytes(window_len),
        records: ds.len(),
        counts: ds.counts(),
        generator: generator.clone(),
        split,
        blob: BLOB_FILE.to_string(),
        sha256: sha256_hex(&blob),
    };
    let blob_path = dir.join(BLOB_FILE);
    std::fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        what: "dataset manifest",
        reason: e.to_string(),
    })?;
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Malformed {
            what: "dataset manifest",
            reason: "missing format_version".into(),
        })?;
    if found != u64::from(DATASET_VERSION) {
        return Err(Error::VersionMismatch {
            what: "dataset manifest",
            expected: DATASET_VERSION,
            found: found as u32,
        });
    }
    serde_json::from_value(value).map_err(|e| Error::Malformed {
        what: "dataset manifest",
        reason: e.to_string(),
    })
}

/// Reads a dataset directory, verifying version, size and checksum.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(DatasetManifest, Dataset)> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let blob_path = dir.join(&manifest.blob);
    let blob = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;

    let rb = record_bytes(manifest.window_len);
    ensure!(
        manifest.record_bytes == rb,
        InvalidArgument,
        "manifest record size {} does not match window length {}",
        manifest.record_bytes,
        manifest.window_len
    );
    let c = manifest.counts;
    let records = c.train.total() + c.val.total() + c.test.total();
    if records != manifest.records {
        return Err(Error::Malformed {
            what: "dataset manifest",
            reason: format!("counts sum to {records}, manifest lists {} records", manifest.records),
        });
    }
    let expected = (records * rb) as u64;
    if (blob.len() as u64) < expected {
        return Err(Error::Truncated {
            what: "dataset blob",
            expected,
            found: blob.len() as u64,
        });
    }
    if blob.len() as u64 != expected {
        return Err(Error::Malformed {
            what: "dataset blob",
            reason: format!("{} bytes, expected {expected}", blob.len()),
        });
    }
    let actual = sha256_hex(&blob);
    if actual != manifest.sha256 {
        return Err(Error::ChecksumMismatch {
            path: blob_path,
            expected: manifest.sha256.clone(),
            actual,
        });
    }

    let mut windows = blob
        .chunks_exact(rb)
        .map(|r| decode_record(r, manifest.window_len))
        .collect::<Result<Vec<_>>>()?;
    let test = windows.split_off(c.train.total() + c.val.total());
    let val = windows.split_off(c.train.total());
    let ds = Dataset {
        train: windows,
        val,
        test,
    };
    if ds.counts() != c {
        return Err(Error::Malformed {
            what: "dataset blob",
            reason: "per-class label counts disagree with the manifest".into(),
        });
    }
    Ok((manifest, ds))
}

/// Population standard deviation.
pub fn std_dev(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}
