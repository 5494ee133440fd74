use serde::{Deserialize, Serialize};

use super::{check_inputs, decide, MetricsError, DEFAULT_TAU};

pub const DEFAULT_N_BINS: usize = 10;

/// One equal-width probability bin. `mean_p` and `pos_rate` are `None`
/// for empty bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_p: Option<f64>,
    pub pos_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBins {
    pub bins: Vec<CalibrationBin>,
}

/// Bins are `[i/M, (i+1)/M)` except the last, which is closed at 1.
fn bin_index(p: f64, n_bins: usize) -> usize {
    ((p * n_bins as f64).floor() as usize).min(n_bins - 1)
}

fn binned_gap(values: &[f64], outcomes: &[f64], n_bins: usize) -> (f64, CalibrationBins) {
    let mut count = vec![0usize; n_bins];
    let mut sum_p = vec![0.0; n_bins];
    let mut sum_y = vec![0.0; n_bins];
    for (&v, &y) in values.iter().zip(outcomes) {
        let b = bin_index(v.clamp(0.0, 1.0), n_bins);
        count[b] += 1;
        sum_p[b] += v;
        sum_y[b] += y;
    }
    let n = values.len() as f64;
    let mut gap = 0.0;
    let bins = (0..n_bins)
        .map(|b| {
            let (mean_p, pos_rate) = if count[b] == 0 {
                (None, None)
            } else {
                let c = count[b] as f64;
                let (mp, pr) = (sum_p[b] / c, sum_y[b] / c);
                gap += c / n * (mp - pr).abs();
                (Some(mp), Some(pr))
            };
            CalibrationBin {
                lo: b as f64 / n_bins as f64,
                hi: (b + 1) as f64 / n_bins as f64,
                count: count[b],
                mean_p,
                pos_rate,
            }
        })
        .collect();
    (gap, CalibrationBins { bins })
}

/// Expected calibration error of the AF probability against the AF label.
pub fn ece(p1: &[f64], labels: &[u8], n_bins: usize) -> Result<(f64, CalibrationBins), MetricsError> {
    check_inputs(p1, labels)?;
    assert!(n_bins > 0, "need at least one bin");
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    Ok(binned_gap(p1, &y, n_bins))
}

/// Confidence-based ECE: `max(p1, 1 - p1)` against whether the
/// thresholded decision was correct.
pub fn ece_confidence(p1: &[f64], labels: &[u8], n_bins: usize) -> Result<(f64, CalibrationBins), MetricsError> {
    check_inputs(p1, labels)?;
    assert!(n_bins > 0, "need at least one bin");
    let conf: Vec<f64> = p1.iter().map(|&p| p.max(1.0 - p)).collect();
    let correct: Vec<f64> = p1
        .iter()
        .zip(labels)
        .map(|(&p, &y)| (decide(p, DEFAULT_TAU) == y) as u8 as f64)
        .collect();
    Ok(binned_gap(&conf, &correct, n_bins))
}
