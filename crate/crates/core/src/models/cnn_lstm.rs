use ndarray::{concatenate, s, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::{DEFAULT_DROPOUT, N_CLASSES};
use crate::nn::{AvgPool2, BatchNorm1d, Conv1d, Dropout, HasParams, Linear, Lstm, MaxPool2, Mode, NnRng, Param, Relu};
use crate::store::STANDARD_LEADS;

/// Stack of shortcut conv blocks followed by an LSTM over the pooled
/// feature sequence, temporal mean pooling, dropout and a linear head.
///
/// `block_channels[i]` is the conv width of block `i`; the avg/max concat
/// doubles it, so block `i + 1` sees `2 * block_channels[i]` inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnLstmSpec {
    pub n_leads: usize,
    pub block_channels: Vec<usize>,
    pub kernel: usize,
    pub lstm_hidden: usize,
    pub dropout_p: f64,
}

impl Default for CnnLstmSpec {
    fn default() -> Self {
        CnnLstmSpec {
            n_leads: STANDARD_LEADS,
            block_channels: vec![16, 16, 32, 32, 64, 64, 128, 128],
            kernel: 10,
            lstm_hidden: 128,
            dropout_p: DEFAULT_DROPOUT,
        }
    }
}

impl CnnLstmSpec {
    /// Channels after each block's concat.
    pub fn output_channels(&self) -> Vec<usize> {
        self.block_channels.iter().map(|c| 2 * c).collect()
    }
}

/// BN → conv → ReLU → dropout, plus a shortcut (1×1 conv when widths
/// differ), summed and then pooled by parallel avg/max halves that are
/// concatenated on the channel axis.
#[derive(Debug, Clone)]
pub struct ShortcutConvBlock {
    bn: BatchNorm1d,
    conv: Conv1d,
    relu: Relu,
    drop: Dropout,
    shortcut: Option<Conv1d>,
    avg: AvgPool2,
    max: MaxPool2,
    width: usize,
}

impl ShortcutConvBlock {
    pub fn new(name: &str, in_ch: usize, width: usize, kernel: usize, dropout_p: f64, rng: &mut NnRng) -> Self {
        ShortcutConvBlock {
            bn: BatchNorm1d::new(&format!("{name}.bn"), in_ch),
            conv: Conv1d::new(&format!("{name}.conv"), in_ch, width, kernel, rng),
            relu: Relu::new(),
            drop: Dropout::new(dropout_p),
            shortcut: (in_ch != width).then(|| Conv1d::new(&format!("{name}.shortcut"), in_ch, width, 1, rng)),
            avg: AvgPool2::new(),
            max: MaxPool2::new(),
            width,
        }
    }

    pub fn has_projection(&self) -> bool {
        self.shortcut.is_some()
    }

    pub fn forward(&mut self, x: Array3<f64>, mode: Mode, rng: &mut NnRng) -> Array3<f64> {
        let train = mode == Mode::Train;
        let mut main = self.bn.forward(x.clone(), mode, train);
        main = self.conv.forward(main, train);
        self.relu.forward(main.as_slice_mut().unwrap(), train);
        self.drop.forward(main.as_slice_mut().unwrap(), mode, rng);
        let sum = match &mut self.shortcut {
            Some(proj) => main + proj.forward(x, train),
            None => main + x,
        };
        let a = self.avg.forward(&sum);
        let m = self.max.forward(&sum, train);
        concatenate(Axis(1), &[a.view(), m.view()]).expect("matching pooled shapes")
    }

    pub fn backward(&mut self, grad: &Array3<f64>) -> Array3<f64> {
        let c = self.width;
        let ga = grad.slice(s![.., ..c, ..]).to_owned();
        let gm = grad.slice(s![.., c.., ..]).to_owned();
        let dsum = self.avg.backward(&ga) + self.max.backward(&gm);

        let mut dmain = dsum.clone();
        self.drop.backward(dmain.as_slice_mut().unwrap());
        self.relu.backward(dmain.as_slice_mut().unwrap());
        let dmain = self.conv.backward(&dmain);
        let dx_main = self.bn.backward(&dmain);
        let dx_short = match &mut self.shortcut {
            Some(proj) => proj.backward(&dsum),
            None => dsum,
        };
        dx_main + dx_short
    }
}

impl HasParams for ShortcutConvBlock {
    fn params(&self) -> Vec<&Param> {
        let mut out = self.bn.params();
        out.extend(self.conv.params());
        if let Some(p) = &self.shortcut {
            out.extend(p.params());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.bn.params_mut();
        out.extend(self.conv.params_mut());
        if let Some(p) = &mut self.shortcut {
            out.extend(p.params_mut());
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CnnLstm {
    blocks: Vec<ShortcutConvBlock>,
    lstm: Lstm,
    dropout: Dropout,
    fc: Linear,
    feature_channels: usize,
    steps: usize,
}

impl CnnLstm {
    pub fn new(spec: &CnnLstmSpec, rng: &mut NnRng) -> Self {
        let mut in_ch = spec.n_leads;
        let mut blocks = Vec::with_capacity(spec.block_channels.len());
        for (i, &w) in spec.block_channels.iter().enumerate() {
            blocks.push(ShortcutConvBlock::new(&format!("blocks.{i}"), in_ch, w, spec.kernel, spec.dropout_p, rng));
            in_ch = 2 * w;
        }
        CnnLstm {
            blocks,
            lstm: Lstm::new("lstm", in_ch, spec.lstm_hidden, rng),
            dropout: Dropout::new(spec.dropout_p),
            fc: Linear::new("head.fc", spec.lstm_hidden, N_CLASSES, rng),
            feature_channels: in_ch,
            steps: 0,
        }
    }

    pub fn feature_channels(&self) -> usize {
        self.feature_channels
    }

    pub(crate) fn forward(&mut self, mut x: Array3<f64>, mode: Mode, rng: &mut NnRng) -> Array2<f64> {
        let train = mode == Mode::Train;
        for b in &mut self.blocks {
            x = b.forward(x, mode, rng);
        }
        // [B, C, T'] -> [B, T', C]
        let seq = x.permuted_axes([0, 2, 1]).as_standard_layout().into_owned();
        self.steps = seq.dim().1;
        let hs = self.lstm.forward(&seq, train);
        let mut pooled = hs.mean_axis(Axis(1)).expect("at least one step");
        self.dropout.forward(pooled.as_slice_mut().unwrap(), mode, rng);
        self.fc.forward(pooled, train)
    }

    pub(crate) fn backward(&mut self, dlogits: &Array2<f64>) {
        let mut g = self.fc.backward(dlogits);
        self.dropout.backward(g.as_slice_mut().unwrap());
        let (batch, hidden) = g.dim();
        let steps = self.steps;
        let scale = 1.0 / steps as f64;
        let dhs = Array3::from_shape_fn((batch, steps, hidden), |(b, _, j)| g[[b, j]] * scale);
        let dseq = self.lstm.backward(&dhs);
        let mut g = dseq.permuted_axes([0, 2, 1]).as_standard_layout().into_owned();
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g);
        }
    }
}

impl HasParams for CnnLstm {
    fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend(b.params());
        }
        out.extend(self.lstm.params());
        out.extend(self.fc.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend(b.params_mut());
        }
        out.extend(self.lstm.params_mut());
        out.extend(self.fc.params_mut());
        out
    }
}
