use ndarray::{s, Array2, Array3, ArrayView2};

use super::{gemm, HasParams, NnRng, Param};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Single-layer, batch-first LSTM. Gate order is input, forget, cell,
/// output; a single bias vector stands in for the usual pair.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_ih: Param,
    pub w_hh: Param,
    pub bias: Param,
    input_dim: usize,
    hidden: usize,
    cache: Option<LstmCache>,
}

#[derive(Debug, Clone)]
struct LstmCache {
    /// `[B*T, In]`, row `b*T + t`.
    input: Array2<f64>,
    /// Activated gates per step, `[T][B, 4H]`.
    gates: Vec<Array2<f64>>,
    /// Cell states `c_0..c_T`, each `[B, H]`.
    cells: Vec<Array2<f64>>,
    /// Hidden states `h_0..h_T`.
    hiddens: Vec<Array2<f64>>,
}

impl Lstm {
    pub fn new(name: &str, input_dim: usize, hidden: usize, rng: &mut NnRng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut bias = Param::zeros("bias", &[4 * hidden]);
        // Forget gate starts open.
        bias.value[hidden..2 * hidden].fill(1.0);
        Lstm {
            w_ih: Param::uniform("w_ih", &[4 * hidden, input_dim], bound, rng).prefixed(name),
            w_hh: Param::uniform("w_hh", &[4 * hidden, hidden], bound, rng).prefixed(name),
            bias: bias.prefixed(name),
            input_dim,
            hidden,
            cache: None,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    /// `[B, T, In] -> [B, T, H]` hidden-state sequence.
    pub fn forward(&mut self, x: &Array3<f64>, keep_cache: bool) -> Array3<f64> {
        let (batch, steps, dim) = x.dim();
        assert_eq!(dim, self.input_dim, "lstm input width");
        let h = self.hidden;
        let input = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((batch * steps, dim))
            .expect("contiguous");

        // Input projections for every step at once: [B*T, 4H].
        let mut proj = Array2::<f64>::zeros((batch * steps, 4 * h));
        gemm(1.0, &input.view(), &self.w_ih.matrix(4 * h, dim).t(), 0.0, &mut proj.view_mut());

        let w_hh = self.w_hh.matrix(4 * h, h);
        let mut cells = vec![Array2::<f64>::zeros((batch, h))];
        let mut hiddens = vec![Array2::<f64>::zeros((batch, h))];
        let mut gates_all = Vec::with_capacity(steps);
        let mut out = Array3::<f64>::zeros((batch, steps, h));

        for t in 0..steps {
            let mut gates = Array2::<f64>::zeros((batch, 4 * h));
            for b in 0..batch {
                gates.row_mut(b).assign(&proj.row(b * steps + t));
            }
            gemm(1.0, &hiddens[t].view(), &w_hh.t(), 1.0, &mut gates.view_mut());
            let mut c = Array2::<f64>::zeros((batch, h));
            let mut hn = Array2::<f64>::zeros((batch, h));
            for b in 0..batch {
                let mut g = gates.row_mut(b);
                for j in 0..4 * h {
                    let pre = g[j] + self.bias.value[j];
                    g[j] = if (2 * h..3 * h).contains(&j) { pre.tanh() } else { sigmoid(pre) };
                }
                for j in 0..h {
                    let (i, f, cg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                    let cv = f * cells[t][[b, j]] + i * cg;
                    c[[b, j]] = cv;
                    hn[[b, j]] = o * cv.tanh();
                }
            }
            out.slice_mut(s![.., t, ..]).assign(&hn);
            gates_all.push(gates);
            cells.push(c);
            hiddens.push(hn);
        }

        self.cache = keep_cache.then_some(LstmCache {
            input,
            gates: gates_all,
            cells,
            hiddens,
        });
        out
    }

    /// Backpropagation through time given the gradient of every hidden state.
    pub fn backward(&mut self, grad: &Array3<f64>) -> Array3<f64> {
        let cache = self.cache.take().expect("lstm backward without cached forward");
        let (batch, steps, h) = grad.dim();
        let dim = self.input_dim;
        let mut d_pre = Array2::<f64>::zeros((batch * steps, 4 * h));
        let mut dh_next = Array2::<f64>::zeros((batch, h));
        let mut dc_next = Array2::<f64>::zeros((batch, h));
        let w_hh = self.w_hh.matrix(4 * h, h).to_owned();

        for t in (0..steps).rev() {
            let gates = &cache.gates[t];
            let c_prev = &cache.cells[t];
            let c = &cache.cells[t + 1];
            let mut da = Array2::<f64>::zeros((batch, 4 * h));
            for b in 0..batch {
                for j in 0..h {
                    let (i, f, cg, o) = (gates[[b, j]], gates[[b, h + j]], gates[[b, 2 * h + j]], gates[[b, 3 * h + j]]);
                    let tc = c[[b, j]].tanh();
                    let dh = grad[[b, t, j]] + dh_next[[b, j]];
                    let d_o = dh * tc;
                    let dc = dc_next[[b, j]] + dh * o * (1.0 - tc * tc);
                    let di = dc * cg;
                    let dg = dc * i;
                    let df = dc * c_prev[[b, j]];
                    dc_next[[b, j]] = dc * f;
                    da[[b, j]] = di * i * (1.0 - i);
                    da[[b, h + j]] = df * f * (1.0 - f);
                    da[[b, 2 * h + j]] = dg * (1.0 - cg * cg);
                    da[[b, 3 * h + j]] = d_o * o * (1.0 - o);
                }
            }
            {
                let mut dw = self.w_hh.grad_matrix(4 * h, h);
                gemm(1.0, &da.t(), &cache.hiddens[t].view(), 1.0, &mut dw);
            }
            for row in da.rows() {
                for (db, v) in self.bias.grad.iter_mut().zip(row) {
                    *db += v;
                }
            }
            gemm(1.0, &da.view(), &w_hh.view(), 0.0, &mut dh_next.view_mut());
            for b in 0..batch {
                d_pre.row_mut(b * steps + t).assign(&da.row(b));
            }
        }

        {
            let mut dw = self.w_ih.grad_matrix(4 * h, dim);
            gemm(1.0, &d_pre.t(), &cache.input.view(), 1.0, &mut dw);
        }
        let mut dx = Array2::<f64>::zeros((batch * steps, dim));
        let w_ih: ArrayView2<f64> = self.w_ih.matrix(4 * h, dim);
        gemm(1.0, &d_pre.view(), &w_ih, 0.0, &mut dx.view_mut());
        dx.into_shape_with_order((batch, steps, dim)).expect("contiguous")
    }
}

impl HasParams for Lstm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w_ih, &self.w_hh, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{central_diff, random3, rng};

    #[test]
    fn forget_bias_is_one() {
        let l = Lstm::new("lstm", 3, 4, &mut rng(0));
        assert_eq!(&l.bias.value[4..8], &[1.0; 4]);
        assert!(l.bias.value[..4].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_matches_hand_formula() {
        let mut l = Lstm::new("lstm", 1, 1, &mut rng(0));
        l.w_ih.value = vec![0.5, -0.3, 0.8, 0.1];
        l.w_hh.value = vec![0.0; 4];
        l.bias.value = vec![0.0; 4];
        let x = Array3::from_elem((1, 1, 1), 2.0);
        let y = l.forward(&x, false);
        let (i, f, g, o) = (sigmoid(1.0), sigmoid(-0.6), (1.6f64).tanh(), sigmoid(0.2));
        let _ = f;
        let c = i * g;
        assert!((y[[0, 0, 0]] - o * c.tanh()).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut l = Lstm::new("lstm", 3, 2, &mut rng(4));
        let x = random3((2, 4, 3), 5);
        let up = random3((2, 4, 2), 6);
        l.forward(&x, true);
        let dx = l.backward(&up);

        let loss = |l: &mut Lstm, x: &Array3<f64>| (l.forward(x, false) * &up).sum();
        for i in [0, 7, 15, 23] {
            let mut l2 = l.clone();
            let num = central_diff(
                |v| {
                    l2.w_ih.value[i] = v;
                    loss(&mut l2, &x)
                },
                l.w_ih.value[i],
                1e-6,
            );
            assert!((num - l.w_ih.grad[i]).abs() < 1e-7, "w_ih[{i}]");
        }
        for i in [0, 9, 15] {
            let mut l2 = l.clone();
            let num = central_diff(
                |v| {
                    l2.w_hh.value[i] = v;
                    loss(&mut l2, &x)
                },
                l.w_hh.value[i],
                1e-6,
            );
            assert!((num - l.w_hh.grad[i]).abs() < 1e-7, "w_hh[{i}]");
        }
        for i in [1, 3, 6] {
            let mut l2 = l.clone();
            let num = central_diff(
                |v| {
                    l2.bias.value[i] = v;
                    loss(&mut l2, &x)
                },
                l.bias.value[i],
                1e-6,
            );
            assert!((num - l.bias.grad[i]).abs() < 1e-7, "bias[{i}]");
        }
        for idx in [[0, 0, 0], [1, 3, 2], [0, 2, 1]] {
            let mut l2 = l.clone();
            let mut xp = x.clone();
            let num = central_diff(
                |v| {
                    xp[idx] = v;
                    loss(&mut l2, &xp)
                },
                x[idx],
                1e-6,
            );
            assert!((num - dx[idx]).abs() < 1e-7);
        }
    }
}
