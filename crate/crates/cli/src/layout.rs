//! Output directory layout and per-stage completion stamps.
//!
//! ```text
//! <root>/config.json
//! <root>/proc/{qc.csv, accepted.csv}   <root>/proc/<fs>hz/<record_id>.ecgb
//! <root>/split/{split.csv, balanced_manifest.csv, test_manifest.csv}
//! <root>/runs/<arch>/<fs>hz/fold<i>/{model.ckpt, epochs.csv, val_predictions.csv}
//! <root>/eval/<arch>/<fs>hz/{val_fold<i>.csv, test_ensemble.csv}
//! <root>/report/{metrics.json, table.md, table.csv, confusion.csv, orderings.json, curves/, calibration/}
//! ```
//!
//! Every stage directory gets a `_stage.json` stamp holding the config
//! hash and the SHA-256 of each file the stage wrote. A missing stamp is
//! what makes a downstream stage fail with a missing-stage error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use ecgfreq_core::models::ArchId;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{data, CliError, CliResult};

pub const STAMP_FILE: &str = "_stage.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStamp {
    pub stage: String,
    pub config_hash: String,
    /// Path relative to the stage directory → SHA-256 hex.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn config_copy(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn proc_dir(&self) -> PathBuf {
        self.root.join("proc")
    }

    pub fn proc_rate_dir(&self, fs_hz: u32) -> PathBuf {
        self.proc_dir().join(format!("{fs_hz}hz"))
    }

    pub fn split_dir(&self) -> PathBuf {
        self.root.join("split")
    }

    pub fn run_dir(&self, arch: ArchId, fs_hz: u32) -> PathBuf {
        self.root.join("runs").join(arch.as_str()).join(format!("{fs_hz}hz"))
    }

    pub fn fold_dir(&self, arch: ArchId, fs_hz: u32, fold: usize) -> PathBuf {
        self.run_dir(arch, fs_hz).join(format!("fold{fold}"))
    }

    pub fn eval_dir(&self, arch: ArchId, fs_hz: u32) -> PathBuf {
        self.root.join("eval").join(arch.as_str()).join(format!("{fs_hz}hz"))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))
            .map_err(data)?;
    }
    fs::write(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(data)
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(data)
}

/// Reads an artifact a previous stage should have produced.
pub fn read_artifact(path: &Path, stage: &str) -> CliResult<String> {
    if !path.exists() {
        return Err(CliError::MissingStage(format!(
            "{} (run `{stage}` first)",
            path.display()
        )));
    }
    read_text(path)
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path)
        .with_context(|| format!("hashing {}", path.display()))
        .map_err(data)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Records `files` (relative to `dir`) as the outputs of `stage`.
pub fn write_stamp(dir: &Path, stage: &str, config_hash: &str, files: &[String]) -> CliResult<()> {
    let mut hashes = BTreeMap::new();
    for f in files {
        hashes.insert(f.clone(), sha256_file(&dir.join(f))?);
    }
    let stamp = StageStamp {
        stage: stage.to_string(),
        config_hash: config_hash.to_string(),
        files: hashes,
    };
    let json = serde_json::to_string_pretty(&stamp).expect("stamp serializes") + "\n";
    write_file(&dir.join(STAMP_FILE), json)
}

/// Loads the stamp `stage` left in `dir`, warning when it was produced
/// under a different config.
pub fn require_stamp(dir: &Path, stage: &str, config_hash: &str) -> CliResult<StageStamp> {
    let path = dir.join(STAMP_FILE);
    let text = read_artifact(&path, stage)?;
    let stamp: StageStamp = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(data)?;
    if stamp.config_hash != config_hash {
        log::warn!(
            "{} was produced under config {}, current config is {}",
            dir.display(),
            &stamp.config_hash[..12.min(stamp.config_hash.len())],
            &config_hash[..12]
        );
    }
    Ok(stamp)
}
