use serde::{Deserialize, Serialize};

use super::resample::{high_frequency_power_ratio, Resampler};
use crate::store::EcgRecord;

pub const QC_CSV_HEADER: &str = "record_id,accepted,flatline_leads,dead_leads,noisy_leads";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QcThresholds {
    /// A lead is flatline when its population std is below this (mV).
    pub flatline_std_mv: f64,
    /// Spectral cutoff as a fraction of Nyquist.
    pub noise_cutoff_frac: f64,
    /// A lead is noisy when more than this fraction of its non-DC power
    /// sits above the cutoff.
    pub noise_power_ratio: f64,
}

impl Default for QcThresholds {
    fn default() -> Self {
        QcThresholds {
            flatline_std_mv: 1e-4,
            noise_cutoff_frac: 0.4,
            noise_power_ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcReport {
    pub record_id: String,
    pub flatline_leads: Vec<usize>,
    pub dead_leads: Vec<usize>,
    pub noisy_leads: Vec<usize>,
    pub accepted: bool,
}

impl QcReport {
    pub fn reasons(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.flatline_leads.is_empty() {
            out.push("flatline");
        }
        if !self.dead_leads.is_empty() {
            out.push("dead");
        }
        if !self.noisy_leads.is_empty() {
            out.push("noisy");
        }
        out
    }

    pub fn to_csv_row(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";");
        format!(
            "{},{},{},{},{}",
            self.record_id,
            self.accepted,
            join(&self.flatline_leads),
            join(&self.dead_leads),
            join(&self.noisy_leads)
        )
    }
}

/// Flags flatline, dead and noisy leads. Expects finite samples.
pub fn quality_check(resampler: &mut Resampler, record: &EcgRecord, thresholds: &QcThresholds) -> QcReport {
    let mut flatline = Vec::new();
    let mut dead = Vec::new();
    let mut noisy = Vec::new();

    for (idx, lead) in record.leads.rows().into_iter().enumerate() {
        let x: Vec<f64> = lead.iter().map(|&v| v as f64).collect();
        let n = x.len().max(1) as f64;
        let mean = x.iter().sum::<f64>() / n;
        let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if std < thresholds.flatline_std_mv {
            flatline.push(idx);
        }
        if x.windows(2).all(|w| w[0] == w[1]) {
            dead.push(idx);
        }
        let ratio = high_frequency_power_ratio(resampler, &x, thresholds.noise_cutoff_frac);
        if ratio > thresholds.noise_power_ratio {
            noisy.push(idx);
        }
    }

    let accepted = flatline.is_empty() && dead.is_empty() && noisy.is_empty();
    QcReport {
        record_id: record.record_id.clone(),
        flatline_leads: flatline,
        dead_leads: dead,
        noisy_leads: noisy,
        accepted,
    }
}

pub fn qc_to_csv<'a>(reports: impl IntoIterator<Item = &'a QcReport>) -> String {
    let mut out = String::from(QC_CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}
