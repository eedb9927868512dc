use std::fs;

use arcflux::data::{generate, load_dataset, save_dataset, split, std_dev, GenConfig, Label, SplitSpec};
use arcflux::Error;

fn small() -> GenConfig {
    GenConfig {
        n_per_class: 30,
        window_len: 128,
        seed: 4,
        ..GenConfig::default()
    }
}

fn saved() -> (tempfile::TempDir, GenConfig) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let ds = split(generate(&cfg).unwrap(), 0.7, 2).unwrap();
    save_dataset(dir.path(), &ds, &cfg, SplitSpec { ratio_train: 0.7, seed: 2 }).unwrap();
    (dir, cfg)
}

#[test]
fn roundtrip_is_bit_exact() {
    let (dir, cfg) = saved();
    let ds = split(generate(&cfg).unwrap(), 0.7, 2).unwrap();
    let (m, back) = load_dataset(dir.path()).unwrap();
    assert_eq!(back, ds);
    for (a, b) in back.train.iter().chain(&back.test).zip(ds.train.iter().chain(&ds.test)) {
        let bits = |w: &[f64]| w.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.samples), bits(&b.samples));
    }
    assert_eq!(m.records, 60);
    assert_eq!(m.counts, ds.counts());
    assert_eq!(m.generator, cfg);

    // Saving again produces the same bytes.
    let again = tempfile::tempdir().unwrap();
    save_dataset(again.path(), &back, &cfg, m.split.clone()).unwrap();
    for f in ["manifest.json", "windows.bin"] {
        assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(again.path().join(f)).unwrap());
    }
}

#[test]
fn flipped_byte_is_a_checksum_error() {
    let (dir, _) = saved();
    let blob = dir.path().join("windows.bin");
    let mut bytes = fs::read(&blob).unwrap();
    bytes[1234] ^= 0x10;
    fs::write(&blob, bytes).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::ChecksumMismatch { .. })));
}

#[test]
fn version_bump_is_a_version_error() {
    let (dir, _) = saved();
    let path = dir.path().join("manifest.json");
    let text = fs::read_to_string(&path).unwrap().replace("\"format_version\": 1", "\"format_version\": 2");
    fs::write(&path, text).unwrap();
    match load_dataset(dir.path()) {
        Err(Error::VersionMismatch { expected: 1, found: 2, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn short_blob_is_a_truncation_error() {
    let (dir, _) = saved();
    let blob = dir.path().join("windows.bin");
    let bytes = fs::read(&blob).unwrap();
    fs::write(&blob, &bytes[..bytes.len() - 7]).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Truncated { .. })));
}

#[test]
fn garbage_manifest_is_malformed() {
    let (dir, _) = saved();
    fs::write(dir.path().join("manifest.json"), "{ not json").unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Malformed { .. })));
}

#[test]
fn arc_windows_are_more_dispersed() {
    let cfg = GenConfig {
        n_per_class: 1000,
        seed: 17,
        ..GenConfig::default()
    };
    let windows = generate(&cfg).unwrap();
    let sd = |l: Label| windows.iter().filter(|w| w.label == l).map(|w| std_dev(&w.samples)).collect::<Vec<_>>();
    let (normal, arc) = (sd(Label::Normal), sd(Label::Arc));
    let wins = normal.iter().zip(&arc).filter(|(n, a)| a > n).count();
    assert!(wins >= 990, "{wins} of 1000 pairs");

    // A single threshold on the standard deviation separates the classes.
    let mut all: Vec<(f64, bool)> = normal.iter().map(|&s| (s, false)).chain(arc.iter().map(|&s| (s, true))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let best = (0..=all.len())
        .map(|cut| all[..cut].iter().filter(|x| !x.1).count() + all[cut..].iter().filter(|x| x.1).count())
        .max()
        .unwrap();
    assert!(best as f64 / all.len() as f64 >= 0.95);
}

#[test]
fn splits_are_disjoint_and_exhaustive() {
    let cfg = small();
    let windows = generate(&cfg).unwrap();
    let ds = split(windows.clone(), 0.7, 9).unwrap();
    let key = |w: &arcflux::data::SignalWindow| (w.meta.seed, w.label as u8);
    let mut seen: Vec<_> = ds.train.iter().chain(&ds.val).chain(&ds.test).map(key).collect();
    seen.sort();
    let mut want: Vec<_> = windows.iter().map(key).collect();
    want.sort();
    assert_eq!(seen, want);
    seen.dedup();
    assert_eq!(seen.len(), windows.len());
}
