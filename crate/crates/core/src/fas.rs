//! Feature amplification: a window is replaced by its `k` largest values in
//! descending order followed by its `k` smallest values in ascending order.
//!
//! Selection is a multiset operation, so the output is invariant under any
//! permutation of the window.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FasConfig {
    pub k: usize,
}

impl FasConfig {
    pub fn new(k: usize) -> Self {
        Self { k }
    }

    pub fn output_len(&self) -> usize {
        2 * self.k
    }

    fn check(&self, window_len: usize) -> Result<()> {
        ensure!(window_len > 0, InvalidArgument, "empty window");
        ensure!(self.k >= 1, InvalidArgument, "k must be at least 1");
        ensure!(
            2 * self.k <= window_len,
            InvalidArgument,
            "2k = {} exceeds window length {window_len}",
            2 * self.k
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FasFeatures {
    pub values: Vec<f64>,
    pub source_len: usize,
}

impl FasFeatures {
    pub fn top(&self) -> &[f64] {
        &self.values[..self.values.len() / 2]
    }

    pub fn bottom(&self) -> &[f64] {
        &self.values[self.values.len() / 2..]
    }
}

/// Selects the extremes of `window` into `out` (length `2k`), using
/// `scratch` as working storage. Does not allocate once `scratch` has
/// capacity for the window.
pub fn fas_transform_into(window: &[f64], cfg: FasConfig, scratch: &mut Vec<f64>, out: &mut [f64]) -> Result<()> {
    cfg.check(window.len())?;
    let k = cfg.k;
    ensure!(out.len() == 2 * k, Shape, "output buffer has {} slots, need {}", out.len(), 2 * k);

    scratch.clear();
    scratch.extend_from_slice(window);
    let len = scratch.len();
    // Partition so the k smallest occupy [..k] and the k largest [len-k..].
    scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
    if len > 2 * k {
        let rest = &mut scratch[k..];
        let idx = rest.len() - k;
        rest.select_nth_unstable_by(idx, f64::total_cmp);
    }

    let (top, bottom) = out.split_at_mut(k);
    top.copy_from_slice(&scratch[len - k..]);
    top.sort_unstable_by(|a, b| b.total_cmp(a));
    bottom.copy_from_slice(&scratch[..k]);
    bottom.sort_unstable_by(f64::total_cmp);
    Ok(())
}

pub fn fas_transform(window: &[f64], cfg: FasConfig) -> Result<FasFeatures> {
    let mut out = vec![0.0; 2 * cfg.k];
    let mut scratch = Vec::with_capacity(window.len());
    fas_transform_into(window, cfg, &mut scratch, &mut out)?;
    Ok(FasFeatures {
        values: out,
        source_len: window.len(),
    })
}

/// Applies [`fas_transform`] row by row. All windows must share one length.
pub fn fas_batch<W: AsRef<[f64]>>(windows: &[W], cfg: FasConfig) -> Result<Vec<FasFeatures>> {
    let Some(first) = windows.first() else {
        return Ok(Vec::new());
    };
    let len = first.as_ref().len();
    let mut scratch = Vec::with_capacity(len);
    windows
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let w = w.as_ref();
            ensure!(w.len() == len, Shape, "ragged batch: row {i} has length {}, row 0 has {len}", w.len());
            let mut out = vec![0.0; 2 * cfg.k];
            fas_transform_into(w, cfg, &mut scratch, &mut out)?;
            Ok(FasFeatures {
                values: out,
                source_len: len,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sort_oracle(w: &[f64], k: usize) -> Vec<f64> {
        let mut s = w.to_vec();
        s.sort_by(|a, b| b.total_cmp(a));
        let mut out = s[..k].to_vec();
        out.extend(s[s.len() - k..].iter().rev());
        out
    }

    fn window_and_k() -> impl Strategy<Value = (Vec<f64>, usize)> {
        // Small value alphabet to force ties.
        let vals = prop_oneof![(-1e3f64..1e3), (-3i32..3).prop_map(f64::from)];
        proptest::collection::vec(vals, 2..200).prop_flat_map(|w| {
            let half = w.len() / 2;
            (Just(w), 1..=half)
        })
    }

    #[test]
    fn constant_window() {
        let f = fas_transform(&[1.7; 16], FasConfig::new(4)).unwrap();
        assert_eq!(f.values, vec![1.7; 8]);
        assert_eq!(f.source_len, 16);
    }

    #[test]
    fn ramp_window() {
        let w: Vec<f64> = (1..=10).map(f64::from).collect();
        let f = fas_transform(&w, FasConfig::new(2)).unwrap();
        assert_eq!(f.values, vec![10.0, 9.0, 1.0, 2.0]);
        assert_eq!(f.top(), &[10.0, 9.0]);
        assert_eq!(f.bottom(), &[1.0, 2.0]);
    }

    #[test]
    fn half_window_is_full_reorder() {
        let w: Vec<f64> = (0..1024).map(|i| ((i * 37) % 1024) as f64).collect();
        let f = fas_transform(&w, FasConfig::new(512)).unwrap();
        assert_eq!(f.values.len(), 1024);
        let mut got = f.values.clone();
        got.sort_by(f64::total_cmp);
        let mut want = w.clone();
        want.sort_by(f64::total_cmp);
        assert_eq!(got, want);
        assert_eq!(f.values[0], 1023.0);
        assert_eq!(f.values[512], 0.0);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(fas_transform(&[], FasConfig::new(1)).is_err());
        assert!(fas_transform(&[1.0, 2.0, 3.0], FasConfig::new(2)).is_err());
        assert!(fas_transform(&[1.0, 2.0], FasConfig::new(0)).is_err());
        let ragged = vec![vec![1.0, 2.0], vec![1.0, 2.0, 3.0]];
        assert!(fas_batch(&ragged, FasConfig::new(1)).is_err());
    }

    #[test]
    fn batch_matches_rows() {
        let rows = vec![vec![3.0, 1.0, 2.0, 5.0], vec![0.0, 0.0, 1.0, -1.0], vec![9.0, 8.0, 7.0, 6.0]];
        let cfg = FasConfig::new(1);
        let out = fas_batch(&rows, cfg).unwrap();
        for (row, f) in rows.iter().zip(&out) {
            assert_eq!(*f, fas_transform(row, cfg).unwrap());
        }
        assert_eq!(fas_batch(&rows[..1], cfg).unwrap()[0], fas_transform(&rows[0], cfg).unwrap());
        let swapped = vec![rows[2].clone(), rows[0].clone(), rows[1].clone()];
        let out2 = fas_batch(&swapped, cfg).unwrap();
        assert_eq!((&out2[0], &out2[1], &out2[2]), (&out[2], &out[0], &out[1]));
    }

    proptest! {
        #[test]
        fn matches_sort_oracle((w, k) in window_and_k()) {
            let f = fas_transform(&w, FasConfig::new(k)).unwrap();
            prop_assert_eq!(f.values.len(), 2 * k);
            prop_assert_eq!(&f.values, &sort_oracle(&w, k));
            let min_top = f.top().iter().copied().fold(f64::INFINITY, f64::min);
            let max_bottom = f.bottom().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(min_top >= max_bottom);
        }

        #[test]
        fn permutation_invariant((w, k) in window_and_k(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = w.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let cfg = FasConfig::new(k);
            prop_assert_eq!(fas_transform(&shuffled, cfg).unwrap(), fas_transform(&w, cfg).unwrap());
        }

        #[test]
        fn shift_equivariant((w, k) in window_and_k(), c in -50.0f64..50.0) {
            let cfg = FasConfig::new(k);
            let shifted: Vec<f64> = w.iter().map(|v| v + c).collect();
            let want: Vec<f64> = fas_transform(&w, cfg).unwrap().values.iter().map(|v| v + c).collect();
            prop_assert_eq!(fas_transform(&shifted, cfg).unwrap().values, want);
        }
    }
}
