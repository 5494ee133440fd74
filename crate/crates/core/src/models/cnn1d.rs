use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{DEFAULT_DROPOUT, N_CLASSES};
use crate::nn::{BatchNorm1d, Conv1d, Dropout, GlobalAvgPool, HasParams, Linear, MaxPool2, Mode, NnRng, Param, Relu};
use crate::store::STANDARD_LEADS;

/// Conv → BN → ReLU stages, max-pooled by 2 after every stage but the last,
/// then global average pooling, dropout and a linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cnn1dSpec {
    pub n_leads: usize,
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub dropout_p: f64,
}

impl Default for Cnn1dSpec {
    fn default() -> Self {
        Cnn1dSpec {
            n_leads: STANDARD_LEADS,
            channels: vec![32, 64, 128, 256],
            kernels: vec![7, 5, 5, 3],
            dropout_p: DEFAULT_DROPOUT,
        }
    }
}

impl Cnn1dSpec {
    pub fn n_pools(&self) -> usize {
        self.channels.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone)]
struct Stage {
    conv: Conv1d,
    bn: BatchNorm1d,
    relu: Relu,
    pool: Option<MaxPool2>,
}

#[derive(Debug, Clone)]
pub struct Cnn1d {
    stages: Vec<Stage>,
    gap: GlobalAvgPool,
    dropout: Dropout,
    fc: Linear,
}

impl Cnn1d {
    pub fn new(spec: &Cnn1dSpec, rng: &mut NnRng) -> Self {
        assert_eq!(spec.channels.len(), spec.kernels.len());
        let last = spec.channels.len() - 1;
        let mut in_ch = spec.n_leads;
        let stages = spec
            .channels
            .iter()
            .zip(&spec.kernels)
            .enumerate()
            .map(|(i, (&out, &k))| {
                let stage = Stage {
                    conv: Conv1d::new(&format!("features.{i}.conv"), in_ch, out, k, rng),
                    bn: BatchNorm1d::new(&format!("features.{i}.bn"), out),
                    relu: Relu::new(),
                    pool: (i < last).then(MaxPool2::new),
                };
                in_ch = out;
                stage
            })
            .collect();
        Cnn1d {
            stages,
            gap: GlobalAvgPool::new(),
            dropout: Dropout::new(spec.dropout_p),
            fc: Linear::new("head.fc", in_ch, N_CLASSES, rng),
        }
    }

    pub fn feature_channels(&self) -> usize {
        self.stages.last().map(|s| s.conv.out_channels()).unwrap_or(0)
    }

    pub(crate) fn forward(&mut self, mut x: Array3<f64>, mode: Mode, rng: &mut NnRng) -> Array2<f64> {
        let train = mode == Mode::Train;
        for s in &mut self.stages {
            x = s.conv.forward(x, train);
            x = s.bn.forward(x, mode, train);
            s.relu.forward(x.as_slice_mut().expect("standard layout"), train);
            if let Some(p) = &mut s.pool {
                x = p.forward(&x, train);
            }
        }
        let mut pooled = self.gap.forward(&x);
        self.dropout.forward(pooled.as_slice_mut().unwrap(), mode, rng);
        self.fc.forward(pooled, train)
    }

    pub(crate) fn backward(&mut self, dlogits: &Array2<f64>) {
        let mut g = self.fc.backward(dlogits);
        self.dropout.backward(g.as_slice_mut().unwrap());
        let mut g = self.gap.backward(&g);
        for s in self.stages.iter_mut().rev() {
            if let Some(p) = &mut s.pool {
                g = p.backward(&g);
            }
            s.relu.backward(g.as_slice_mut().unwrap());
            g = s.bn.backward(&g);
            g = s.conv.backward(&g);
        }
    }
}

impl HasParams for Cnn1d {
    fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for s in &self.stages {
            out.extend(s.conv.params());
            out.extend(s.bn.params());
        }
        out.extend(self.fc.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            out.extend(s.conv.params_mut());
            out.extend(s.bn.params_mut());
        }
        out.extend(self.fc.params_mut());
        out
    }
}
