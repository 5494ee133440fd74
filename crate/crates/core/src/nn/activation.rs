use rand::Rng;

use super::{Mode, NnRng};

/// In-place ReLU over any contiguous buffer.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, data: &mut [f64], keep_cache: bool) {
        if keep_cache {
            self.mask.clear();
            self.mask.extend(data.iter().map(|&v| v > 0.0));
        }
        for v in data.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    pub fn backward(&self, grad: &mut [f64]) {
        for (g, &m) in grad.iter_mut().zip(&self.mask) {
            if !m {
                *g = 0.0;
            }
        }
    }
}

/// Inverted dropout: kept activations are scaled by `1 / (1 - p)` during
/// training so evaluation is the identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    p: f64,
    mask: Vec<f64>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout rate must lie in [0, 1)");
        Dropout { p, mask: Vec::new() }
    }

    pub fn rate(&self) -> f64 {
        self.p
    }

    pub fn forward(&mut self, data: &mut [f64], mode: Mode, rng: &mut NnRng) {
        self.mask.clear();
        if mode == Mode::Eval || self.p == 0.0 {
            return;
        }
        let scale = 1.0 / (1.0 - self.p);
        self.mask.reserve(data.len());
        for v in data.iter_mut() {
            let m = if rng.random::<f64>() < self.p { 0.0 } else { scale };
            self.mask.push(m);
            *v *= m;
        }
    }

    pub fn backward(&self, grad: &mut [f64]) {
        if self.mask.is_empty() {
            return;
        }
        for (g, m) in grad.iter_mut().zip(&self.mask) {
            *g *= m;
        }
    }
}
