//! The run configuration file: one TOML document, every section optional,
//! unknown keys rejected.

use std::path::{Path, PathBuf};

use arcflux::bench::BenchConfig;
use arcflux::data::GenConfig;
use arcflux::model::{HeadKind, ModelConfig};
use arcflux::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Dataset directory (manifest plus blob).
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    /// Histories, reports, benchmark and sweep outputs.
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "data".into(),
            checkpoint: "runs/model.ckpt".into(),
            report_dir: "runs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub ratio_train: f64,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            ratio_train: 0.7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Grid {
    K,
    Blocks,
    Heads,
}

impl Grid {
    pub fn name(self) -> &'static str {
        match self {
            Grid::K => "k",
            Grid::Blocks => "blocks",
            Grid::Heads => "heads",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub grid: Grid,
    pub k: Vec<usize>,
    pub blocks: Vec<usize>,
    pub heads: Vec<HeadKind>,
    /// Timed iterations per cell for the latency column.
    pub bench_iters: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            grid: Grid::K,
            k: vec![128, 256, 512],
            blocks: vec![2, 4, 8, 16],
            heads: HeadKind::ALL.to_vec(),
            bench_iters: 200,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub generate: GenConfig,
    pub split: SplitSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub bench: BenchConfig,
    pub sweep: SweepSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let check = |r: arcflux::Result<()>| r.map_err(|e| CliError::Config(e.to_string()));
        check(self.generate.validate())?;
        check(self.model.validate())?;
        check(self.train.validate())?;
        if !(self.split.ratio_train > 0.0 && self.split.ratio_train < 1.0) {
            return Err(CliError::Config(format!(
                "split.ratio_train must be in (0, 1), got {}",
                self.split.ratio_train
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.model.k_fas, 512);
        assert_eq!(cfg.sweep.blocks, vec![2, 4, 8, 16]);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::parse("[model]\nn_blokcs = 3\n").unwrap_err().to_string();
        assert!(err.contains("n_blokcs"), "{err}");
        let err = RunConfig::parse("[modle]\n").unwrap_err().to_string();
        assert!(err.contains("modle"), "{err}");
    }

    #[test]
    fn roundtrips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.sweep.grid = Grid::Heads;
        cfg.model.head_kind = HeadKind::Mlp;
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }
}
