//! Minimal layer library with explicit forward/backward passes.
//!
//! Activations are `f64` tensors laid out `[batch, channels, time]`. Each
//! layer caches what its backward pass needs during `forward`, so a layer
//! instance must see `forward` then `backward` on the same batch. Gradients
//! accumulate into [`Param::grad`] until [`Param::zero_grad`].

mod activation;
mod conv;
mod linear;
mod loss;
mod lstm;
mod norm;
mod pool;

pub use activation::{Dropout, Relu};
pub use conv::Conv1d;
pub use linear::Linear;
pub use loss::{softmax_rows, weighted_cross_entropy};
pub use lstm::Lstm;
pub use norm::BatchNorm1d;
pub use pool::{AvgPool2, GlobalAvgPool, MaxPool2};

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// RNG used for initialisation and dropout masks.
pub type NnRng = rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Batch statistics, dropout active, caches kept for backward.
    Train,
    /// Running statistics, dropout off.
    Eval,
}

/// A named parameter or buffer array.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    /// Buffers (batch-norm running statistics) are saved but not optimized.
    pub trainable: bool,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Param {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![0.0; n],
            grad: vec![0.0; n],
            trainable: true,
        }
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], v: f64) -> Self {
        let mut p = Param::zeros(name, shape);
        p.value.fill(v);
        p
    }

    pub fn buffer(name: impl Into<String>, shape: &[usize], v: f64) -> Self {
        let mut p = Param::filled(name, shape, v);
        p.trainable = false;
        p
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut NnRng) -> Self {
        let mut p = Param::zeros(name, shape);
        for v in &mut p.value {
            *v = rng.random_range(-bound..=bound);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub(crate) fn matrix(&self, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.value).expect("param shape")
    }

    pub(crate) fn grad_matrix(&mut self, rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
        ArrayViewMut2::from_shape((rows, cols), &mut self.grad).expect("param shape")
    }

    fn prefixed(mut self, prefix: &str) -> Self {
        self.name = format!("{prefix}.{}", self.name);
        self
    }
}

/// Anything that owns parameters, visited in declaration order.
pub trait HasParams {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Number of trainable scalars.
    fn num_trainable(&self) -> usize {
        self.params().iter().filter(|p| p.trainable).map(|p| p.len()).sum()
    }
}

/// `c = alpha * a · b + beta * c`
pub(crate) fn gemm(alpha: f64, a: &ArrayView2<f64>, b: &ArrayView2<f64>, beta: f64, c: &mut ArrayViewMut2<f64>) {
    general_mat_mul(alpha, a, b, beta, c);
}

/// Kaiming-style uniform bound for a layer with `fan_in` inputs.
pub(crate) fn fan_in_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in.max(1) as f64).sqrt()
}
