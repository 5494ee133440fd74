use ndarray::{Array3, Axis};

use super::{HasParams, Mode, Param};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalisation over the batch and time axes.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    channels: usize,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Array3<f64>,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl BatchNorm1d {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm1d {
            gamma: Param::filled("gamma", &[channels], 1.0).prefixed(name),
            beta: Param::zeros("beta", &[channels]).prefixed(name),
            running_mean: Param::buffer("running_mean", &[channels], 0.0).prefixed(name),
            running_var: Param::buffer("running_var", &[channels], 1.0).prefixed(name),
            channels,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: Array3<f64>, mode: Mode, keep_cache: bool) -> Array3<f64> {
        let (batch, ch, len) = x.dim();
        assert_eq!(ch, self.channels, "batch-norm channels");
        let n = (batch * len) as f64;
        let mut xhat = x;
        let mut inv_std = vec![0.0; ch];
        for (c, mut lane) in xhat.axis_iter_mut(Axis(1)).enumerate() {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = lane.sum() / n;
                    let var = lane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let unbiased = if n > 1.0 { var * n / (n - 1.0) } else { var };
                    let rm = &mut self.running_mean.value[c];
                    *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean;
                    let rv = &mut self.running_var.value[c];
                    *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * unbiased;
                    (mean, var)
                }
                Mode::Eval => (self.running_mean.value[c], self.running_var.value[c]),
            };
            let is = 1.0 / (var + BN_EPS).sqrt();
            inv_std[c] = is;
            lane.mapv_inplace(|v| (v - mean) * is);
        }
        let mut out = xhat.clone();
        for (c, mut lane) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            lane.mapv_inplace(|v| g * v + b);
        }
        self.cache = keep_cache.then_some(BnCache { xhat, inv_std, mode });
        out
    }

    pub fn backward(&mut self, grad: &Array3<f64>) -> Array3<f64> {
        let cache = self.cache.take().expect("batch-norm backward without cached forward");
        let (batch, _, len) = grad.dim();
        let n = (batch * len) as f64;
        let mut dx = Array3::<f64>::zeros(grad.dim());
        for c in 0..self.channels {
            let g = grad.index_axis(Axis(1), c);
            let xh = cache.xhat.index_axis(Axis(1), c);
            let sum_g: f64 = g.sum();
            let sum_gx: f64 = g.iter().zip(xh.iter()).map(|(a, b)| a * b).sum();
            self.gamma.grad[c] += sum_gx;
            self.beta.grad[c] += sum_g;
            let gamma = self.gamma.value[c];
            let is = cache.inv_std[c];
            let mut d = dx.index_axis_mut(Axis(1), c);
            match cache.mode {
                Mode::Train => {
                    // dxhat = g * gamma; dx = is/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                    let k = gamma * is / n;
                    ndarray::Zip::from(&mut d).and(&g).and(&xh).for_each(|d, &gv, &xv| {
                        *d = k * (n * gv - sum_g - xv * sum_gx);
                    });
                }
                Mode::Eval => {
                    ndarray::Zip::from(&mut d).and(&g).for_each(|d, &gv| *d = gv * gamma * is);
                }
            }
        }
        dx
    }
}

impl HasParams for BatchNorm1d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta, &mut self.running_mean, &mut self.running_var]
    }
}
