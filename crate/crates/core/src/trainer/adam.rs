use crate::nn::Param;

/// Adam with bias correction. State is indexed by position in the
/// parameter list, so the same list order must be passed every step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    /// Updates every trainable parameter from its accumulated gradient.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "parameter list changed between steps");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p.value[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Per-epoch learning-rate hook.
pub trait LrSchedule {
    fn lr(&self, base_lr: f64, epoch: usize) -> f64;
}

/// Returns the base rate unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantLr;

impl LrSchedule for ConstantLr {
    fn lr(&self, base_lr: f64, _epoch: usize) -> f64 {
        base_lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Param::filled("w", &[2], 1.0);
        p.grad = vec![0.5, -3.0];
        let mut opt = Adam::new(0.01);
        opt.step(&mut [&mut p]);
        // m_hat = g, v_hat = g^2, so the step is lr * sign(g).
        assert!((p.value[0] - 0.99).abs() < 1e-9);
        assert!((p.value[1] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn buffers_are_left_alone() {
        let mut b = Param::buffer("running_mean", &[1], 2.0);
        b.grad = vec![1.0];
        Adam::new(0.1).step(&mut [&mut b]);
        assert_eq!(b.value, vec![2.0]);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = Param::filled("x", &[1], 5.0);
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            p.grad = vec![2.0 * (p.value[0] - 1.5)];
            opt.step(&mut [&mut p]);
        }
        assert!((p.value[0] - 1.5).abs() < 1e-2);
    }
}
