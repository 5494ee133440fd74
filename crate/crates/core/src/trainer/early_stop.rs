use serde::{Deserialize, Serialize};

/// Smallest change that counts as an improvement.
pub const MIN_DELTA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StopMetric {
    ValF1,
    ValLoss,
}

impl StopMetric {
    fn improves(self, candidate: f64, best: f64) -> bool {
        match self {
            StopMetric::ValF1 => candidate > best + MIN_DELTA,
            StopMetric::ValLoss => candidate < best - MIN_DELTA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on one monitored value.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    metric: StopMetric,
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(metric: StopMetric, patience: usize) -> Self {
        EarlyStopper {
            metric,
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// 1-based epoch of the best value, 0 before any observation.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        let better = match self.best {
            None => !value.is_nan(),
            Some(b) => self.metric.improves(value, b),
        };
        if better {
            self.best = Some(value);
            self.best_epoch = epoch;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}
