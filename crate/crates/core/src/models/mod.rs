//! The two benchmark architectures and their checkpoint format.
//!
//! Graph structure depends only on the [`ArchSpec`]; the input length
//! `T = 10 * fs` only changes runtime activation lengths, so the parameter
//! count of a graph is identical at every sampling rate.

mod checkpoint;
mod cnn1d;
mod cnn_lstm;

pub use checkpoint::{ModelCheckpoint, NamedArray, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use cnn1d::{Cnn1d, Cnn1dSpec};
pub use cnn_lstm::{CnnLstm, CnnLstmSpec, ShortcutConvBlock};

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::SplitMix64;
use crate::nn::{HasParams, Mode, NnRng, Param};

pub const DEFAULT_DROPOUT: f64 = 0.3;
pub const N_CLASSES: usize = 2;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input of length {actual} is too short; this graph needs at least {min}")]
    InputTooShort { min: usize, actual: usize },
    #[error("input has {actual} leads, graph expects {expected}")]
    LeadMismatch { expected: usize, actual: usize },
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchId {
    Cnn1d,
    #[serde(rename = "cnnlstm")]
    CnnLstm,
}

impl ArchId {
    pub const ALL: [ArchId; 2] = [ArchId::CnnLstm, ArchId::Cnn1d];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchId::Cnn1d => "cnn1d",
            ArchId::CnnLstm => "cnnlstm",
        }
    }

    /// Display name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ArchId::Cnn1d => "CNN1D",
            ArchId::CnnLstm => "CNN-LSTM",
        }
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cnn1d" => Ok(ArchId::Cnn1d),
            "cnnlstm" | "cnn_lstm" | "cnn-lstm" => Ok(ArchId::CnnLstm),
            other => Err(format!("unknown architecture `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum ArchSpec {
    Cnn1d(Cnn1dSpec),
    #[serde(rename = "cnnlstm")]
    CnnLstm(CnnLstmSpec),
}

impl ArchSpec {
    pub fn standard(arch: ArchId) -> Self {
        match arch {
            ArchId::Cnn1d => ArchSpec::Cnn1d(Cnn1dSpec::default()),
            ArchId::CnnLstm => ArchSpec::CnnLstm(CnnLstmSpec::default()),
        }
    }

    pub fn arch(&self) -> ArchId {
        match self {
            ArchSpec::Cnn1d(_) => ArchId::Cnn1d,
            ArchSpec::CnnLstm(_) => ArchId::CnnLstm,
        }
    }

    pub fn n_leads(&self) -> usize {
        match self {
            ArchSpec::Cnn1d(s) => s.n_leads,
            ArchSpec::CnnLstm(s) => s.n_leads,
        }
    }

    pub fn dropout_p(&self) -> f64 {
        match self {
            ArchSpec::Cnn1d(s) => s.dropout_p,
            ArchSpec::CnnLstm(s) => s.dropout_p,
        }
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        match &mut self {
            ArchSpec::Cnn1d(s) => s.dropout_p = p,
            ArchSpec::CnnLstm(s) => s.dropout_p = p,
        }
        self
    }

    /// Shortest input every pooling stage can handle (at least one step left).
    pub fn min_input_len(&self) -> usize {
        match self {
            ArchSpec::Cnn1d(s) => 1 << s.n_pools(),
            ArchSpec::CnnLstm(s) => 1 << s.block_channels.len(),
        }
    }

    /// Time length after each pooling stage for an input of length `t`.
    pub fn time_lengths(&self, t: usize) -> Vec<usize> {
        let pools = match self {
            ArchSpec::Cnn1d(s) => s.n_pools(),
            ArchSpec::CnnLstm(s) => s.block_channels.len(),
        };
        (1..=pools).map(|i| t >> i).collect()
    }
}

/// Derives a per-(arch, fs, fold) initialisation seed from an experiment seed.
pub fn init_seed(base: u64, arch: ArchId, fs_hz: u32, fold: usize) -> u64 {
    let mut rng = SplitMix64::new(base);
    let mut h = rng.next_u64();
    for part in [arch as u64 + 1, fs_hz as u64, fold as u64] {
        h = SplitMix64::new(h ^ part).next_u64();
    }
    h
}

#[derive(Debug, Clone)]
enum Network {
    Cnn1d(Cnn1d),
    CnnLstm(CnnLstm),
}

/// A built graph with its own dropout RNG.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    spec: ArchSpec,
    net: Network,
    rng: NnRng,
}

impl ModelGraph {
    pub fn build(spec: ArchSpec, seed: u64) -> Self {
        let mut init = NnRng::seed_from_u64(seed);
        let net = match &spec {
            ArchSpec::Cnn1d(s) => Network::Cnn1d(Cnn1d::new(s, &mut init)),
            ArchSpec::CnnLstm(s) => Network::CnnLstm(CnnLstm::new(s, &mut init)),
        };
        ModelGraph {
            spec,
            net,
            rng: NnRng::seed_from_u64(seed ^ 0xD80_0017),
        }
    }

    pub fn build_cnn1d(seed: u64) -> Self {
        ModelGraph::build(ArchSpec::standard(ArchId::Cnn1d), seed)
    }

    pub fn build_cnn_lstm(seed: u64) -> Self {
        ModelGraph::build(ArchSpec::standard(ArchId::CnnLstm), seed)
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn arch(&self) -> ArchId {
        self.spec.arch()
    }

    pub fn reseed_dropout(&mut self, seed: u64) {
        self.rng = NnRng::seed_from_u64(seed);
    }

    /// `[B, leads, T] -> [B, 2]` logits. In [`Mode::Train`] the pass keeps
    /// the caches needed by [`ModelGraph::backward`].
    pub fn forward(&mut self, x: &Array3<f64>, mode: Mode) -> Result<Array2<f64>, ModelError> {
        let (_, leads, len) = x.dim();
        if leads != self.spec.n_leads() {
            return Err(ModelError::LeadMismatch {
                expected: self.spec.n_leads(),
                actual: leads,
            });
        }
        let min = self.spec.min_input_len();
        if len < min {
            return Err(ModelError::InputTooShort { min, actual: len });
        }
        let logits = match &mut self.net {
            Network::Cnn1d(n) => n.forward(x.clone(), mode, &mut self.rng),
            Network::CnnLstm(n) => n.forward(x.clone(), mode, &mut self.rng),
        };
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteActivation("logits".into()));
        }
        Ok(logits)
    }

    /// Accumulates parameter gradients for the last training-mode forward.
    pub fn backward(&mut self, dlogits: &Array2<f64>) {
        match &mut self.net {
            Network::Cnn1d(n) => n.backward(dlogits),
            Network::CnnLstm(n) => n.backward(dlogits),
        }
    }

    /// Channel count of the final feature map before the head.
    pub fn feature_channels(&self) -> usize {
        match &self.net {
            Network::Cnn1d(n) => n.feature_channels(),
            Network::CnnLstm(n) => n.feature_channels(),
        }
    }
}

impl HasParams for ModelGraph {
    fn params(&self) -> Vec<&Param> {
        match &self.net {
            Network::Cnn1d(n) => n.params(),
            Network::CnnLstm(n) => n.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match &mut self.net {
            Network::Cnn1d(n) => n.params_mut(),
            Network::CnnLstm(n) => n.params_mut(),
        }
    }
}
