use std::collections::HashSet;

use super::{ConfusionMatrix, MetricsError, PredictionContext, PredictionSet};

/// Averages per-fold logits record by record and re-applies softmax.
///
/// All sets must list the same records, in the same order, with the same
/// labels. The result carries an ensemble context for the first set's
/// architecture and rate.
pub fn ensemble_logits(folds: &[PredictionSet], expected_k: usize) -> Result<PredictionSet, MetricsError> {
    if folds.len() != expected_k {
        return Err(MetricsError::FoldCountMismatch {
            expected: expected_k,
            actual: folds.len(),
        });
    }
    let first = folds.first().ok_or(MetricsError::EmptyInput)?;
    for f in &folds[1..] {
        if f.record_ids != first.record_ids {
            return Err(MetricsError::MisalignedRecords(format!(
                "{} and {} list different records",
                first.context, f.context
            )));
        }
        if f.labels != first.labels {
            return Err(MetricsError::MisalignedRecords(format!(
                "{} and {} disagree on labels",
                first.context, f.context
            )));
        }
        if f.context.arch() != first.context.arch() || f.context.fs_hz() != first.context.fs_hz() {
            return Err(MetricsError::MisalignedRecords(format!(
                "{} and {} come from different cells",
                first.context, f.context
            )));
        }
    }
    let k = folds.len() as f64;
    let logits = (0..first.len())
        .map(|i| {
            let mut z = [0.0; 2];
            for f in folds {
                z[0] += f.logits[i][0];
                z[1] += f.logits[i][1];
            }
            [z[0] / k, z[1] / k]
        })
        .collect();
    PredictionSet::from_logits(
        PredictionContext::Ensemble {
            arch: first.context.arch(),
            fs_hz: first.context.fs_hz(),
        },
        first.record_ids.clone(),
        logits,
        first.labels.clone(),
    )
}

/// Sums per-fold confusion matrices over disjoint validation sets.
pub fn pooled_confusion(sets: &[PredictionSet], tau: f64) -> Result<ConfusionMatrix, MetricsError> {
    let mut seen = HashSet::new();
    let mut total = ConfusionMatrix::default();
    for s in sets {
        for id in &s.record_ids {
            if !seen.insert(id.as_str()) {
                return Err(MetricsError::OverlapDetected(id.clone()));
            }
        }
        total = total + s.confusion(tau);
    }
    Ok(total)
}
