//! Aggregates per-cell predictions into the comparison table.
//!
//! Validation rows are the mean and population standard deviation of
//! per-fold metrics. Test rows come from the logit-averaged ensemble on the
//! held-out split.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::metrics::{
    self, classification_metrics, ece, ece_confidence, mean_curve_with_band, mean_std, pooled_confusion, pr_curve,
    roc_curve, uniform_grid, ConfusionMatrix, CurveBand, MetricsError, PredictionSet,
};
use crate::models::ArchId;

/// `NaN` travels as JSON `null`.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    #[serde(with = "nan_as_null")]
    pub accuracy: f64,
    #[serde(with = "nan_as_null")]
    pub f1: f64,
    #[serde(with = "nan_as_null")]
    pub precision: f64,
    #[serde(with = "nan_as_null")]
    pub sensitivity: f64,
    #[serde(with = "nan_as_null")]
    pub specificity: f64,
    #[serde(with = "nan_as_null")]
    pub mcc: f64,
    /// NaN when the evaluated set has a single class.
    #[serde(with = "nan_as_null")]
    pub auroc: f64,
    #[serde(with = "nan_as_null")]
    pub ece: f64,
    #[serde(with = "nan_as_null")]
    pub ece_conf: f64,
    #[serde(with = "nan_as_null")]
    pub brier: f64,
}

pub const METRIC_NAMES: [&str; 10] = [
    "accuracy",
    "f1",
    "precision",
    "sensitivity",
    "specificity",
    "mcc",
    "auroc",
    "ece",
    "ece_conf",
    "brier",
];

impl MetricRow {
    pub fn values(&self) -> [f64; 10] {
        [
            self.accuracy,
            self.f1,
            self.precision,
            self.sensitivity,
            self.specificity,
            self.mcc,
            self.auroc,
            self.ece,
            self.ece_conf,
            self.brier,
        ]
    }

    fn from_values(v: [f64; 10]) -> Self {
        MetricRow {
            accuracy: v[0],
            f1: v[1],
            precision: v[2],
            sensitivity: v[3],
            specificity: v[4],
            mcc: v[5],
            auroc: v[6],
            ece: v[7],
            ece_conf: v[8],
            brier: v[9],
        }
    }
}

/// All metrics of one prediction set plus the names of 0/0 ratios.
pub fn metric_row(set: &PredictionSet, tau: f64, n_bins: usize) -> Result<(MetricRow, Vec<String>), MetricsError> {
    let cm = set.confusion(tau);
    let cls = classification_metrics(&cm)?;
    let auroc = match metrics::auroc(&set.p1, &set.labels) {
        Ok(a) => a,
        Err(MetricsError::SingleClass) => f64::NAN,
        Err(e) => return Err(e),
    };
    let mut degenerate = cls.degenerate.clone();
    if auroc.is_nan() {
        degenerate.push("auroc".into());
    }
    let row = MetricRow {
        accuracy: cls.accuracy,
        f1: cls.f1,
        precision: cls.precision,
        sensitivity: cls.sensitivity,
        specificity: cls.specificity,
        mcc: cls.mcc,
        auroc,
        ece: ece(&set.p1, &set.labels, n_bins)?.0,
        ece_conf: ece_confidence(&set.p1, &set.labels, n_bins)?.0,
        brier: metrics::brier(&set.p1, &set.labels)?,
    };
    Ok((row, degenerate))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub mean: MetricRow,
    pub std: MetricRow,
    pub folds: Vec<MetricRow>,
    pub pooled_confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub metrics: MetricRow,
    pub confusion: ConfusionMatrix,
    pub n_records: usize,
    pub prevalence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub arch: ArchId,
    pub fs_hz: u32,
    pub validation: FoldSummary,
    pub test: TestSummary,
    /// Metrics that hit a 0/0 ratio in any fold or in the test set.
    pub degenerate: Vec<String>,
}

pub fn cell_report(
    arch: ArchId,
    fs_hz: u32,
    folds: &[PredictionSet],
    test: &PredictionSet,
    tau: f64,
    n_bins: usize,
) -> Result<CellReport, MetricsError> {
    let mut degenerate = Vec::new();
    let mut rows = Vec::with_capacity(folds.len());
    for (i, f) in folds.iter().enumerate() {
        let (row, d) = metric_row(f, tau, n_bins)?;
        degenerate.extend(d.into_iter().map(|m| format!("fold{i}:{m}")));
        rows.push(row);
    }
    let mut mean = [0.0; 10];
    let mut std = [0.0; 10];
    for m in 0..10 {
        let column: Vec<f64> = rows.iter().map(|r| r.values()[m]).collect();
        (mean[m], std[m]) = mean_std(&column);
    }
    let (test_row, d) = metric_row(test, tau, n_bins)?;
    degenerate.extend(d.into_iter().map(|m| format!("test:{m}")));
    let positives = test.labels.iter().filter(|&&y| y == 1).count();
    Ok(CellReport {
        arch,
        fs_hz,
        validation: FoldSummary {
            mean: MetricRow::from_values(mean),
            std: MetricRow::from_values(std),
            folds: rows,
            pooled_confusion: pooled_confusion(folds, tau)?,
        },
        test: TestSummary {
            metrics: test_row,
            confusion: test.confusion(tau),
            n_records: test.len(),
            prevalence: positives as f64 / test.len().max(1) as f64,
        },
        degenerate,
    })
}

/// Mean ± std ROC and PR bands over the fold validation sets.
pub fn fold_curve_bands(folds: &[PredictionSet], grid_points: usize) -> Result<(CurveBand, CurveBand), MetricsError> {
    let grid = uniform_grid(grid_points);
    let mut rocs = Vec::with_capacity(folds.len());
    let mut prs = Vec::with_capacity(folds.len());
    for f in folds {
        rocs.push(roc_curve(&f.p1, &f.labels)?);
        prs.push(pr_curve(&f.p1, &f.labels)?);
    }
    Ok((mean_curve_with_band(&rocs, &grid)?, mean_curve_with_band(&prs, &grid)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: Option<String>,
    pub tau: f64,
    pub n_bins: usize,
    /// Monitored early-stopping metric, recorded because the two candidate
    /// monitors give different checkpoints.
    pub early_stop_metric: String,
    pub cells: Vec<CellReport>,
}

impl ExperimentReport {
    pub fn cell(&self, arch: ArchId, fs_hz: u32) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.arch == arch && c.fs_hz == fs_hz)
    }

    /// Cells ordered by architecture (CNN-LSTM first) then rate.
    pub fn sorted_cells(&self) -> Vec<&CellReport> {
        let mut cells: Vec<&CellReport> = self.cells.iter().collect();
        let rank = |a: ArchId| ArchId::ALL.iter().position(|&x| x == a).unwrap_or(usize::MAX);
        cells.sort_by_key(|c| (rank(c.arch), c.fs_hz));
        cells
    }
}

const TABLE_COLUMNS: [(&str, usize); 8] = [
    ("Accuracy", 0),
    ("F1", 1),
    ("Precision", 2),
    ("Sensitivity", 3),
    ("Specificity", 4),
    ("MCC", 5),
    ("AUROC", 6),
    ("ECE", 7),
];

fn fmt_metric(v: f64, idx: usize) -> String {
    if v.is_nan() {
        "n/a".into()
    } else if idx == 7 {
        format!("{v:.3}")
    } else {
        format!("{v:.4}")
    }
}

/// Markdown comparison table: a validation block (mean ± std) above a test
/// block (ensemble).
pub fn table_markdown(report: &ExperimentReport) -> String {
    let mut out = String::from("| Dataset | Model | Frequency |");
    for (name, _) in TABLE_COLUMNS {
        let _ = write!(out, " {name} |");
    }
    out.push_str("\n|---|---|---|");
    out.push_str(&"---|".repeat(TABLE_COLUMNS.len()));
    out.push('\n');
    let cells = report.sorted_cells();
    for c in &cells {
        let (m, s) = (c.validation.mean.values(), c.validation.std.values());
        let _ = write!(out, "| Validation | {} | {} Hz |", c.arch.display_name(), c.fs_hz);
        for (_, i) in TABLE_COLUMNS {
            let _ = write!(out, " {} ± {} |", fmt_metric(m[i], i), fmt_metric(s[i], i));
        }
        out.push('\n');
    }
    for c in &cells {
        let t = c.test.metrics.values();
        let _ = write!(out, "| Test | {} | {} Hz |", c.arch.display_name(), c.fs_hz);
        for (_, i) in TABLE_COLUMNS {
            let _ = write!(out, " {} |", fmt_metric(t[i], i));
        }
        out.push('\n');
    }
    out
}

/// Long-form CSV: one row per (split, arch, fs) with every metric; `std`
/// columns are empty for test rows.
pub fn table_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("split,arch,fs_hz");
    for n in METRIC_NAMES {
        let _ = write!(out, ",{n}");
    }
    for n in METRIC_NAMES {
        let _ = write!(out, ",{n}_std");
    }
    out.push('\n');
    let cells = report.sorted_cells();
    for c in &cells {
        let _ = write!(out, "validation,{},{}", c.arch, c.fs_hz);
        for v in c.validation.mean.values().iter().chain(c.validation.std.values().iter()) {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    for c in &cells {
        let _ = write!(out, "test,{},{}", c.arch, c.fs_hz);
        for v in c.test.metrics.values() {
            let _ = write!(out, ",{v:?}");
        }
        out.push_str(&",".repeat(METRIC_NAMES.len()));
        out.push('\n');
    }
    out
}

pub fn confusion_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("split,arch,fs_hz,tn,fp,fn,tp\n");
    for c in report.sorted_cells() {
        for (split, cm) in [("validation_pooled", c.validation.pooled_confusion), ("test", c.test.confusion)] {
            let _ = writeln!(out, "{split},{},{},{},{},{},{}", c.arch, c.fs_hz, cm.tn, cm.fp, cm.fn_, cm.tp);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Qualitative test-set orderings expected from a full-scale run:
/// high-rate degradation of CNN1D, rate stability of CNN-LSTM and its
/// better calibration at 250 and 500 Hz.
pub fn check_orderings(report: &ExperimentReport) -> Vec<OrderingCheck> {
    let test = |arch: ArchId, fs: u32| report.cell(arch, fs).map(|c| c.test.metrics);
    let missing = |name: &str, what: &str| OrderingCheck {
        name: name.into(),
        passed: false,
        detail: format!("missing cell {what}"),
    };
    let mut out = Vec::new();

    let name = "cnn1d_auroc_500_below_100";
    out.push(match (test(ArchId::Cnn1d, 500), test(ArchId::Cnn1d, 100)) {
        (Some(hi), Some(lo)) => {
            let gap = lo.auroc - hi.auroc;
            OrderingCheck {
                name: name.into(),
                passed: gap >= 0.003,
                detail: format!("AUROC 100 Hz {:.4} - 500 Hz {:.4} = {gap:.4} (need >= 0.003)", lo.auroc, hi.auroc),
            }
        }
        _ => missing(name, "cnn1d at 100/500 Hz"),
    });

    let name = "cnn1d_sensitivity_drop_100_to_500";
    out.push(match (test(ArchId::Cnn1d, 100), test(ArchId::Cnn1d, 500)) {
        (Some(lo), Some(hi)) => {
            let drop = lo.sensitivity - hi.sensitivity;
            OrderingCheck {
                name: name.into(),
                passed: drop >= 0.02,
                detail: format!("sensitivity drop {drop:.4} (need >= 0.02)"),
            }
        }
        _ => missing(name, "cnn1d at 100/500 Hz"),
    });

    let name = "cnnlstm_accuracy_spread";
    let accs: Vec<f64> = report
        .cells
        .iter()
        .filter(|c| c.arch == ArchId::CnnLstm)
        .map(|c| c.test.metrics.accuracy)
        .collect();
    out.push(if accs.len() < 2 {
        missing(name, "cnnlstm at two or more rates")
    } else {
        let spread = accs.iter().cloned().fold(f64::MIN, f64::max) - accs.iter().cloned().fold(f64::MAX, f64::min);
        OrderingCheck {
            name: name.into(),
            passed: spread <= 0.01,
            detail: format!("accuracy spread {spread:.4} over {} rates (need <= 0.01)", accs.len()),
        }
    });

    for fs in [250, 500] {
        let name = format!("cnnlstm_ece_not_above_cnn1d_{fs}hz");
        out.push(match (test(ArchId::CnnLstm, fs), test(ArchId::Cnn1d, fs)) {
            (Some(h), Some(c)) => OrderingCheck {
                passed: h.ece <= c.ece,
                detail: format!("ECE CNN-LSTM {:.3} vs CNN1D {:.3}", h.ece, c.ece),
                name,
            },
            _ => missing(&name, &format!("both archs at {fs} Hz")),
        });
    }
    out
}
