//! Evaluation math: softmax posteriors, thresholded decisions, confusion
//! metrics, AUROC, curves, Brier score, ECE and logit-average ensembling.
//!
//! AFIB is the positive class (label 1). Decisions use `p1 >= tau`.

mod calibration;
mod curves;
mod ensemble;
mod io;

pub use calibration::{ece, ece_confidence, CalibrationBin, CalibrationBins, DEFAULT_N_BINS};
pub use curves::{mean_curve_with_band, pr_curve, roc_curve, trapezoid_area, uniform_grid, Curve, CurveBand, DEFAULT_GRID_POINTS};
pub use ensemble::{ensemble_logits, pooled_confusion};
pub use io::{bins_to_csv, band_to_csv, predictions_from_csv, predictions_to_csv, PREDICTION_CSV_HEADER};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::ArchId;

pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("non-finite logit")]
    NonFiniteLogit,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("input is empty")]
    EmptyInput,
    #[error("only one class present; metric undefined")]
    SingleClass,
    #[error("scores and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("degenerate curve: {0}")]
    DegenerateCurve(String),
    #[error("fold prediction sets are not aligned: {0}")]
    MisalignedRecords(String),
    #[error("expected {expected} folds, got {actual}")]
    FoldCountMismatch { expected: usize, actual: usize },
    #[error("record {0} appears in more than one fold")]
    OverlapDetected(String),
    #[error("prediction CSV line {line}: {reason}")]
    BadCsv { line: usize, reason: String },
}

/// Where a prediction set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PredictionContext {
    Fold { arch: ArchId, fs_hz: u32, fold: usize },
    Ensemble { arch: ArchId, fs_hz: u32 },
}

impl PredictionContext {
    pub fn arch(&self) -> ArchId {
        match *self {
            PredictionContext::Fold { arch, .. } | PredictionContext::Ensemble { arch, .. } => arch,
        }
    }

    pub fn fs_hz(&self) -> u32 {
        match *self {
            PredictionContext::Fold { fs_hz, .. } | PredictionContext::Ensemble { fs_hz, .. } => fs_hz,
        }
    }
}

impl fmt::Display for PredictionContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictionContext::Fold { arch, fs_hz, fold } => write!(f, "{arch}/{fs_hz}hz/fold{fold}"),
            PredictionContext::Ensemble { arch, fs_hz } => write!(f, "{arch}/{fs_hz}hz/ensemble"),
        }
    }
}

impl FromStr for PredictionContext {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('/').collect();
        let [arch, fs, which] = parts[..] else {
            return Err(format!("bad context `{s}`"));
        };
        let arch: ArchId = arch.parse()?;
        let fs_hz = fs
            .strip_suffix("hz")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| format!("bad rate in `{s}`"))?;
        if which == "ensemble" {
            return Ok(PredictionContext::Ensemble { arch, fs_hz });
        }
        let fold = which
            .strip_prefix("fold")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| format!("bad fold in `{s}`"))?;
        Ok(PredictionContext::Fold { arch, fs_hz, fold })
    }
}

/// Per-record logits, AF probabilities and labels for one evaluation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub context: PredictionContext,
    pub record_ids: Vec<String>,
    pub logits: Vec<[f64; 2]>,
    pub p1: Vec<f64>,
    pub labels: Vec<u8>,
}

impl PredictionSet {
    pub fn from_logits(
        context: PredictionContext,
        record_ids: Vec<String>,
        logits: Vec<[f64; 2]>,
        labels: Vec<u8>,
    ) -> Result<Self, MetricsError> {
        if record_ids.len() != logits.len() || logits.len() != labels.len() {
            return Err(MetricsError::LengthMismatch(logits.len(), labels.len()));
        }
        let p1 = logits
            .iter()
            .map(|z| softmax_prob(z[0], z[1]))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PredictionSet {
            context,
            record_ids,
            logits,
            p1,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty()
    }

    pub fn confusion(&self, tau: f64) -> ConfusionMatrix {
        ConfusionMatrix::from_predictions(&self.p1, &self.labels, tau)
    }
}

/// Softmax probabilities `(p0, p1)` of a two-logit output, max-subtracted.
pub fn softmax_pair(z0: f64, z1: f64) -> Result<(f64, f64), MetricsError> {
    if !z0.is_finite() || !z1.is_finite() {
        return Err(MetricsError::NonFiniteLogit);
    }
    let m = z0.max(z1);
    let e0 = (z0 - m).exp();
    let e1 = (z1 - m).exp();
    let s = e0 + e1;
    Ok((e0 / s, e1 / s))
}

/// `P(AF) = e^{z1} / (e^{z0} + e^{z1})`.
pub fn softmax_prob(z0: f64, z1: f64) -> Result<f64, MetricsError> {
    softmax_pair(z0, z1).map(|(_, p1)| p1)
}

/// 1 iff `p1 >= tau`.
pub fn decide(p1: f64, tau: f64) -> u8 {
    (p1 >= tau) as u8
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tp: u64,
}

impl ConfusionMatrix {
    pub fn new(tn: u64, fp: u64, fn_: u64, tp: u64) -> Self {
        ConfusionMatrix { tn, fp, fn_, tp }
    }

    pub fn from_predictions(p1: &[f64], labels: &[u8], tau: f64) -> Self {
        let mut cm = ConfusionMatrix::default();
        for (&p, &y) in p1.iter().zip(labels) {
            match (decide(p, tau), y) {
                (1, 1) => cm.tp += 1,
                (1, _) => cm.fp += 1,
                (_, 1) => cm.fn_ += 1,
                _ => cm.tn += 1,
            }
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }
}

impl std::ops::Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(self, o: Self) -> Self {
        ConfusionMatrix::new(self.tn + o.tn, self.fp + o.fp, self.fn_ + o.fn_, self.tp + o.tp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub mcc: f64,
    /// Metrics whose ratio was 0/0 and was reported as 0.
    pub degenerate: Vec<String>,
}

pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<ClassificationMetrics, MetricsError> {
    let n = cm.total();
    if n == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let (tp, tn, fp, fn_) = (cm.tp as f64, cm.tn as f64, cm.fp as f64, cm.fn_ as f64);
    let mut degenerate = Vec::new();
    let mut ratio = |name: &str, num: f64, den: f64| {
        if den == 0.0 {
            degenerate.push(name.to_string());
            0.0
        } else {
            num / den
        }
    };
    let accuracy = (tp + tn) / n as f64;
    let precision = ratio("precision", tp, tp + fp);
    let sensitivity = ratio("sensitivity", tp, tp + fn_);
    let specificity = ratio("specificity", tn, tn + fp);
    let f1 = ratio("f1", 2.0 * precision * sensitivity, precision + sensitivity);
    let mcc_den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = ratio("mcc", tp * tn - fp * fn_, mcc_den);
    Ok(ClassificationMetrics {
        accuracy,
        precision,
        sensitivity,
        specificity,
        f1,
        mcc,
        degenerate,
    })
}

fn check_inputs(p1: &[f64], labels: &[u8]) -> Result<(), MetricsError> {
    if p1.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(p1.len(), labels.len()));
    }
    if p1.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(())
}

/// Mann–Whitney AUROC via average ranks: ties between a positive and a
/// negative count one half.
pub fn auroc(p1: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    check_inputs(p1, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..p1.len()).collect();
    order.sort_by(|&a, &b| p1[a].total_cmp(&p1[b]));

    // Twice the positive rank sum keeps tie averages integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && p1[order[j + 1]] == p1[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean (i + j + 2) / 2.
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank_sum2 += pos_in_group * (i + j + 2) as u128;
        i = j + 1;
    }
    let n_pos_u = n_pos as u128;
    let u2 = rank_sum2 - n_pos_u * (n_pos_u + 1);
    Ok(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Mean squared error between `p1` and the 0/1 labels.
pub fn brier(p1: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    check_inputs(p1, labels)?;
    Ok(p1
        .iter()
        .zip(labels)
        .map(|(&p, &y)| (p - y as f64).powi(2))
        .sum::<f64>()
        / p1.len() as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_prob(0.0, 0.0).unwrap(), 0.5);
        let p = softmax_prob(2.0, 1.0).unwrap();
        assert!((p - 1.0 / (1.0 + std::f64::consts::E)).abs() < 1e-15);
        assert!((p - 0.26894).abs() < 1e-5);
        assert_eq!(softmax_prob(-1000.0, 1000.0).unwrap(), 1.0);
        assert_eq!(softmax_prob(f64::NAN, 0.0), Err(MetricsError::NonFiniteLogit));
        let (p0, p1) = softmax_pair(0.3, -2.7).unwrap();
        assert!((p0 + p1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decide_ties_go_positive() {
        assert_eq!(decide(0.5, 0.5), 1);
        assert_eq!(decide(0.4999, 0.5), 0);
        assert_eq!(decide(0.0, 0.0), 1);
    }

    #[test]
    fn hand_confusion_case() {
        let m = classification_metrics(&ConfusionMatrix::new(9, 1, 2, 8)).unwrap();
        assert!((m.sensitivity - 0.8).abs() < 1e-12);
        assert!((m.specificity - 0.9).abs() < 1e-12);
        assert!((m.precision - 8.0 / 9.0).abs() < 1e-12);
        assert!((m.f1 - 16.0 / 19.0).abs() < 1e-12);
        assert!((m.mcc - 70.0 / 9900f64.sqrt()).abs() < 1e-12);
        assert!((m.f1 - 0.8421).abs() < 1e-4);
        assert!((m.mcc - 0.7035).abs() < 1e-4);
        assert!(m.degenerate.is_empty());
    }

    #[test]
    fn perfect_and_degenerate() {
        let m = classification_metrics(&ConfusionMatrix::new(5, 0, 0, 7)).unwrap();
        for v in [m.accuracy, m.precision, m.sensitivity, m.specificity, m.f1, m.mcc] {
            assert_eq!(v, 1.0);
        }
        let d = classification_metrics(&ConfusionMatrix::new(6, 0, 4, 0)).unwrap();
        assert_eq!(d.sensitivity, 0.0);
        assert_eq!(d.precision, 0.0);
        assert!(d.degenerate.contains(&"precision".to_string()));
        assert!(d.degenerate.contains(&"mcc".to_string()));
        assert_eq!(classification_metrics(&ConfusionMatrix::default()), Err(MetricsError::EmptyMatrix));
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.2], &[1, 1]), Err(MetricsError::SingleClass));
        assert_eq!(auroc(&[0.1, 0.9, 0.4], &[1, 0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier(&[1.0, 0.0], &[1, 0]).unwrap(), 0.0);
        assert_eq!(brier(&[0.5; 3], &[1, 0, 1]).unwrap(), 0.25);
        assert!((brier(&[0.8, 0.3], &[1, 0]).unwrap() - 0.065).abs() < 1e-12);
        assert_eq!(brier(&[], &[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn context_round_trip() {
        for c in [
            PredictionContext::Fold {
                arch: ArchId::Cnn1d,
                fs_hz: 62,
                fold: 3,
            },
            PredictionContext::Ensemble {
                arch: ArchId::CnnLstm,
                fs_hz: 500,
            },
        ] {
            assert_eq!(c.to_string().parse::<PredictionContext>().unwrap(), c);
        }
    }
}
