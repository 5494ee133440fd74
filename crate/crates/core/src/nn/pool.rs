use ndarray::{s, Array2, Array3, Axis};

/// Width-2, stride-2 max pooling; odd trailing samples are dropped.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    /// For each output cell, whether the max came from the second input.
    picks: Vec<bool>,
    in_dim: (usize, usize, usize),
}

impl MaxPool2 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Array3<f64>, keep_cache: bool) -> Array3<f64> {
        let (batch, ch, len) = x.dim();
        let half = len / 2;
        let mut out = Array3::<f64>::zeros((batch, ch, half));
        let mut picks = Vec::with_capacity(if keep_cache { batch * ch * half } else { 0 });
        for ((b, c, t), o) in out.indexed_iter_mut() {
            let (a, z) = (x[[b, c, 2 * t]], x[[b, c, 2 * t + 1]]);
            let second = z > a;
            *o = if second { z } else { a };
            if keep_cache {
                picks.push(second);
            }
        }
        self.picks = picks;
        self.in_dim = (batch, ch, len);
        out
    }

    pub fn backward(&mut self, grad: &Array3<f64>) -> Array3<f64> {
        let mut dx = Array3::<f64>::zeros(self.in_dim);
        for (((b, c, t), g), &second) in grad.indexed_iter().zip(&self.picks) {
            dx[[b, c, 2 * t + second as usize]] += g;
        }
        dx
    }
}

/// Width-2, stride-2 average pooling; odd trailing samples are dropped.
#[derive(Debug, Clone, Default)]
pub struct AvgPool2 {
    in_dim: (usize, usize, usize),
}

impl AvgPool2 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Array3<f64>) -> Array3<f64> {
        let (batch, ch, len) = x.dim();
        let half = len / 2;
        self.in_dim = (batch, ch, len);
        let even = x.slice(s![.., .., 0..2 * half;2]);
        let odd = x.slice(s![.., .., 1..2 * half;2]);
        (&even + &odd) * 0.5
    }

    pub fn backward(&mut self, grad: &Array3<f64>) -> Array3<f64> {
        let mut dx = Array3::<f64>::zeros(self.in_dim);
        let half = grad.dim().2;
        let g = grad * 0.5;
        dx.slice_mut(s![.., .., 0..2 * half;2]).assign(&g);
        dx.slice_mut(s![.., .., 1..2 * half;2]).assign(&g);
        dx
    }
}

/// Mean over the time axis: `[B, C, T] -> [B, C]`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    len: usize,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Array3<f64>) -> Array2<f64> {
        self.len = x.dim().2;
        x.mean_axis(Axis(2)).expect("non-empty time axis")
    }

    pub fn backward(&mut self, grad: &Array2<f64>) -> Array3<f64> {
        let (batch, ch) = grad.dim();
        let scale = 1.0 / self.len as f64;
        let mut dx = Array3::<f64>::zeros((batch, ch, self.len));
        for ((b, c), g) in grad.indexed_iter() {
            dx.slice_mut(s![b, c, ..]).fill(g * scale);
        }
        dx
    }
}
