use serde::{Deserialize, Serialize};

use super::{check_inputs, mean_std, MetricsError};

pub const DEFAULT_GRID_POINTS: usize = 101;

/// Piecewise-linear curve; `thresholds[i]` produced point `i`
/// (`+inf` for the anchor point).
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub thresholds: Vec<f64>,
}

/// Pointwise mean and population standard deviation over a common grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBand {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Cumulative (tp, fp) counts after admitting each distinct score,
/// highest first.
fn sweep(p1: &[f64], labels: &[u8]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..p1.len()).collect();
    order.sort_by(|&a, &b| p1[b].total_cmp(&p1[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let t = p1[order[i]];
        while i < order.len() && p1[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((t, tp, fp));
    }
    out
}

fn class_counts(labels: &[u8]) -> Result<(usize, usize), MetricsError> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    Ok((pos, neg))
}

/// ROC points `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(p1: &[f64], labels: &[u8]) -> Result<Curve, MetricsError> {
    check_inputs(p1, labels)?;
    let (pos, neg) = class_counts(labels)?;
    let mut c = Curve {
        x: vec![0.0],
        y: vec![0.0],
        thresholds: vec![f64::INFINITY],
    };
    for (t, tp, fp) in sweep(p1, labels) {
        c.x.push(fp as f64 / neg as f64);
        c.y.push(tp as f64 / pos as f64);
        c.thresholds.push(t);
    }
    Ok(c)
}

/// Precision–recall points `(recall, precision)` starting at `(0, 1)`.
/// The no-skill baseline is the prevalence of label 1.
pub fn pr_curve(p1: &[f64], labels: &[u8]) -> Result<Curve, MetricsError> {
    check_inputs(p1, labels)?;
    let (pos, _) = class_counts(labels)?;
    let mut c = Curve {
        x: vec![0.0],
        y: vec![1.0],
        thresholds: vec![f64::INFINITY],
    };
    for (t, tp, fp) in sweep(p1, labels) {
        c.x.push(tp as f64 / pos as f64);
        c.y.push(tp as f64 / (tp + fp) as f64);
        c.thresholds.push(t);
    }
    Ok(c)
}

pub fn trapezoid_area(c: &Curve) -> f64 {
    c.x.windows(2)
        .zip(c.y.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

/// `n` evenly spaced points on `[0, 1]`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Linear interpolation at `g`. At a repeated x the last point wins, so a
/// vertical ROC step reports its upper end. Outside the range the nearest
/// end value is used.
fn interpolate(c: &Curve, g: f64) -> f64 {
    let n = c.x.len();
    let i = c.x.partition_point(|&x| x <= g);
    if i == 0 {
        return c.y[0];
    }
    if i == n {
        return c.y[n - 1];
    }
    let (x0, x1, y0, y1) = (c.x[i - 1], c.x[i], c.y[i - 1], c.y[i]);
    y0 + (g - x0) / (x1 - x0) * (y1 - y0)
}

fn validate(c: &Curve) -> Result<(), MetricsError> {
    if c.x.len() < 2 || c.x.len() != c.y.len() {
        return Err(MetricsError::DegenerateCurve("fewer than two points".into()));
    }
    if c.x.iter().chain(&c.y).any(|v| !v.is_finite()) {
        return Err(MetricsError::DegenerateCurve("non-finite coordinate".into()));
    }
    if c.x.windows(2).any(|w| w[1] < w[0]) {
        return Err(MetricsError::DegenerateCurve("x is not monotone".into()));
    }
    if c.x[0] == c.x[c.x.len() - 1] {
        return Err(MetricsError::DegenerateCurve("zero-width x range".into()));
    }
    Ok(())
}

/// Interpolates every fold curve onto `grid` and reports the pointwise
/// mean and population standard deviation.
pub fn mean_curve_with_band(curves: &[Curve], grid: &[f64]) -> Result<CurveBand, MetricsError> {
    if curves.len() < 2 {
        return Err(MetricsError::DegenerateCurve(format!(
            "need at least two curves, got {}",
            curves.len()
        )));
    }
    for c in curves {
        validate(c)?;
    }
    let mut mean = Vec::with_capacity(grid.len());
    let mut std = Vec::with_capacity(grid.len());
    for &g in grid {
        let ys: Vec<f64> = curves.iter().map(|c| interpolate(c, g)).collect();
        let (m, s) = mean_std(&ys);
        mean.push(m);
        std.push(s);
    }
    Ok(CurveBand {
        grid: grid.to_vec(),
        mean,
        std,
    })
}
