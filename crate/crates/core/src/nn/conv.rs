use ndarray::{s, Array2, Array3, ArrayView2, ArrayViewMut2};

use super::{fan_in_bound, gemm, HasParams, NnRng, Param};

/// Stride-1 1-D convolution with "same" zero padding: `kernel / 2` zeros
/// on the left and the rest on the right (5/4 for an even kernel of 10).
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: Param,
    pub bias: Param,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    pad_left: usize,
    input: Option<Array3<f64>>,
}

impl Conv1d {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, kernel: usize, rng: &mut NnRng) -> Self {
        let bound = fan_in_bound(in_ch * kernel);
        Conv1d {
            weight: Param::uniform("weight", &[out_ch, in_ch, kernel], bound, rng).prefixed(name),
            bias: Param::zeros("bias", &[out_ch]).prefixed(name),
            in_ch,
            out_ch,
            kernel,
            pad_left: kernel / 2,
            input: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    /// Offset range of valid time steps for kernel tap `k`: output step `t`
    /// reads input `t + k - pad_left`.
    fn valid(&self, k: usize, len: usize) -> (usize, usize, isize) {
        let shift = k as isize - self.pad_left as isize;
        let lo = (-shift).max(0) as usize;
        let hi = (len as isize - shift).min(len as isize).max(0) as usize;
        (lo, hi.max(lo), shift)
    }

    fn im2col(&self, x: ArrayView2<f64>, cols: &mut Array2<f64>) {
        let len = x.ncols();
        cols.fill(0.0);
        for ci in 0..self.in_ch {
            let src = x.row(ci);
            let src = src.as_slice().expect("contiguous input");
            for k in 0..self.kernel {
                let (lo, hi, shift) = self.valid(k, len);
                if lo >= hi {
                    continue;
                }
                let mut row = cols.row_mut(ci * self.kernel + k);
                let dst = row.as_slice_mut().unwrap();
                let s0 = (lo as isize + shift) as usize;
                dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
            }
        }
    }

    fn col2im(&self, dcols: &Array2<f64>, mut dx: ArrayViewMut2<f64>) {
        let len = dx.ncols();
        for ci in 0..self.in_ch {
            let mut row = dx.row_mut(ci);
            let dst = row.as_slice_mut().expect("contiguous grad");
            for k in 0..self.kernel {
                let (lo, hi, shift) = self.valid(k, len);
                if lo >= hi {
                    continue;
                }
                let src = dcols.row(ci * self.kernel + k);
                let src = src.as_slice().unwrap();
                let d0 = (lo as isize + shift) as usize;
                for (d, s) in dst[d0..d0 + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                    *d += s;
                }
            }
        }
    }

    pub fn forward(&mut self, x: Array3<f64>, keep_cache: bool) -> Array3<f64> {
        let (batch, ch, len) = x.dim();
        assert_eq!(ch, self.in_ch, "conv input channels");
        let x = x.as_standard_layout().into_owned();
        let ck = self.in_ch * self.kernel;
        let mut cols = Array2::<f64>::zeros((ck, len));
        let mut out = Array3::<f64>::zeros((batch, self.out_ch, len));
        let w = self.weight.matrix(self.out_ch, ck);
        for b in 0..batch {
            self.im2col(x.slice(s![b, .., ..]), &mut cols);
            let mut ob = out.slice_mut(s![b, .., ..]);
            gemm(1.0, &w, &cols.view(), 0.0, &mut ob);
            for (mut row, &bias) in ob.rows_mut().into_iter().zip(&self.bias.value) {
                row.mapv_inplace(|v| v + bias);
            }
        }
        self.input = keep_cache.then_some(x);
        out
    }

    pub fn backward(&mut self, grad: &Array3<f64>) -> Array3<f64> {
        let x = self.input.take().expect("conv backward without cached forward");
        let (batch, _, len) = x.dim();
        let ck = self.in_ch * self.kernel;
        let mut cols = Array2::<f64>::zeros((ck, len));
        let mut dcols = Array2::<f64>::zeros((ck, len));
        let mut dx = Array3::<f64>::zeros(x.dim());
        for b in 0..batch {
            let gb = grad.slice(s![b, .., ..]);
            self.im2col(x.slice(s![b, .., ..]), &mut cols);
            {
                let mut dw = self.weight.grad_matrix(self.out_ch, ck);
                gemm(1.0, &gb, &cols.t(), 1.0, &mut dw);
            }
            for (db, row) in self.bias.grad.iter_mut().zip(gb.rows()) {
                *db += row.sum();
            }
            let w = self.weight.matrix(self.out_ch, ck);
            gemm(1.0, &w.t(), &gb, 0.0, &mut dcols.view_mut());
            self.col2im(&dcols, dx.slice_mut(s![b, .., ..]));
        }
        dx
    }
}

impl HasParams for Conv1d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
