use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ecgfreq_core::cohort::SplitParams;
use ecgfreq_core::metrics::{DEFAULT_GRID_POINTS, DEFAULT_N_BINS, DEFAULT_TAU};
use ecgfreq_core::models::ArchId;
use ecgfreq_core::preprocess::{PreprocessConfig, TARGET_FREQUENCIES};
use ecgfreq_core::trainer::{ensure_uniform, Hyperparams, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsParams {
    pub n_bins: usize,
    pub tau: f64,
    pub grid_points: usize,
}

impl Default for MetricsParams {
    fn default() -> Self {
        MetricsParams {
            n_bins: DEFAULT_N_BINS,
            tau: DEFAULT_TAU,
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

/// One experiment. Relative paths resolve against the config file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    pub output_root: PathBuf,
    pub target_fs: Vec<u32>,
    pub archs: Vec<ArchId>,
    pub preprocess: PreprocessConfig,
    pub split: SplitParams,
    pub train: BTreeMap<ArchId, Hyperparams>,
    pub metrics: MetricsParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            manifest: PathBuf::from("manifest.csv"),
            output_root: PathBuf::from("out"),
            target_fs: TARGET_FREQUENCIES.to_vec(),
            archs: ArchId::ALL.to_vec(),
            preprocess: PreprocessConfig::default(),
            split: SplitParams::default(),
            train: ArchId::ALL.iter().map(|&a| (a, Hyperparams::default())).collect(),
            metrics: MetricsParams::default(),
        }
    }
}

impl ExperimentConfig {
    /// Fills a training section for every listed architecture and sorts
    /// the rate list, so the stored copy is self-describing.
    pub fn materialize(mut self) -> Self {
        for &a in &self.archs {
            self.train.entry(a).or_default();
        }
        self.target_fs.sort_unstable();
        self.target_fs.dedup();
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.target_fs.is_empty() || self.target_fs.contains(&0) {
            return bad("target_fs must list positive rates".into());
        }
        if self.archs.is_empty() {
            return bad("archs must not be empty".into());
        }
        if self.preprocess.duration_s == 0 || !(self.preprocess.clip_mv > 0.0) {
            return bad("preprocess.duration_s and clip_mv must be positive".into());
        }
        if !(self.split.test_frac > 0.0 && self.split.test_frac < 1.0) {
            return bad(format!("split.test_frac must be in (0, 1), got {}", self.split.test_frac));
        }
        if self.split.k < 2 {
            return bad(format!("split.k must be at least 2, got {}", self.split.k));
        }
        if self.metrics.n_bins == 0 || self.metrics.grid_points < 2 || !(0.0..=1.0).contains(&self.metrics.tau) {
            return bad("metrics: need n_bins >= 1, grid_points >= 2 and tau in [0, 1]".into());
        }
        for (arch, h) in &self.train {
            h.validate().map_err(|e| CliError::Config(format!("train.{arch}: {e}")))?;
        }
        ensure_uniform(&self.train_configs()).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn hyper(&self, arch: ArchId) -> Hyperparams {
        self.train.get(&arch).cloned().unwrap_or_default()
    }

    pub fn train_config(&self, arch: ArchId, fs_hz: u32) -> TrainConfig {
        TrainConfig::new(arch, fs_hz, self.hyper(arch))
    }

    /// Every (arch, fs) training config of the experiment.
    pub fn train_configs(&self) -> Vec<TrainConfig> {
        self.archs
            .iter()
            .flat_map(|&a| self.target_fs.iter().map(move |&fs| (a, fs)))
            .map(|(a, fs)| self.train_config(a, fs))
            .collect()
    }

    pub fn override_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        for h in self.train.values_mut() {
            h.seed = seed;
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// SHA-256 of the materialized JSON.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// A validated config plus where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub hash: String,
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Command-line values that replace config fields before hashing.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub test_frac: Option<f64>,
    pub folds: Option<usize>,
}

pub fn load_config(path: &Path, overrides: Overrides) -> Result<LoadedConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(s) = overrides.seed {
        config.override_seed(s);
    }
    if let Some(f) = overrides.test_frac {
        config.split.test_frac = f;
    }
    if let Some(k) = overrides.folds {
        config.split.k = k;
    }
    let config = config.materialize();
    config.validate()?;
    let hash = config.hash();
    Ok(LoadedConfig {
        config,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        hash,
    })
}
