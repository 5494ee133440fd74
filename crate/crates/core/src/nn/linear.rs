use ndarray::Array2;

use super::{gemm, HasParams, NnRng, Param};

/// Affine map `y = x W^T + b` on `[batch, in]` inputs.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    in_dim: usize,
    out_dim: usize,
    input: Option<Array2<f64>>,
}

impl Linear {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut NnRng) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        Linear {
            weight: Param::uniform("weight", &[out_dim, in_dim], bound, rng).prefixed(name),
            bias: Param::zeros("bias", &[out_dim]).prefixed(name),
            in_dim,
            out_dim,
            input: None,
        }
    }

    pub fn forward(&mut self, x: Array2<f64>, keep_cache: bool) -> Array2<f64> {
        assert_eq!(x.ncols(), self.in_dim, "linear input width");
        let mut out = Array2::<f64>::zeros((x.nrows(), self.out_dim));
        let w = self.weight.matrix(self.out_dim, self.in_dim);
        gemm(1.0, &x.view(), &w.t(), 0.0, &mut out.view_mut());
        for mut row in out.rows_mut() {
            for (v, b) in row.iter_mut().zip(&self.bias.value) {
                *v += b;
            }
        }
        self.input = keep_cache.then_some(x);
        out
    }

    pub fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        let x = self.input.take().expect("linear backward without cached forward");
        {
            let mut dw = self.weight.grad_matrix(self.out_dim, self.in_dim);
            gemm(1.0, &grad.t(), &x.view(), 1.0, &mut dw);
        }
        for row in grad.rows() {
            for (db, g) in self.bias.grad.iter_mut().zip(row) {
                *db += g;
            }
        }
        let mut dx = Array2::<f64>::zeros(x.dim());
        let w = self.weight.matrix(self.out_dim, self.in_dim);
        gemm(1.0, &grad.view(), &w, 0.0, &mut dx.view_mut());
        dx
    }
}

impl HasParams for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
