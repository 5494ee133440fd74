//! Signal preparation: non-finite cleaning, clipping, FFT resampling,
//! per-lead z-scoring, fixed-length segmentation and quality control.
//!
//! The pipeline order is fixed: clean → clip → resample → z-score → segment.
//! Quality control runs on the cleaned, clipped native-rate record.

mod qc;
mod resample;

pub use qc::{qc_to_csv, quality_check, QcReport, QcThresholds, QC_CSV_HEADER};
pub use resample::{fft_resample, high_frequency_power_ratio, Resampler};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::EcgRecord;

/// Sampling rates the benchmark compares.
pub const TARGET_FREQUENCIES: [u32; 4] = [62, 100, 250, 500];
pub const DEFAULT_DURATION_S: u32 = 10;
pub const DEFAULT_CLIP_MV: f64 = 32.0;

/// Leads whose population std falls below this are zeroed by z-scoring.
pub const ZSCORE_MIN_STD: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("signal too short: need {needed} samples, have {actual}")]
    TooShort { needed: usize, actual: usize },
    #[error("resample target length must be positive")]
    NonPositiveTarget,
    #[error("clip limit must be positive, got {0}")]
    NonPositiveLimit(f64),
    #[error("record is sampled at {actual} Hz but the resample spec expects {expected} Hz")]
    FsMismatch { expected: u32, actual: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResampleSpec {
    pub source_fs: u32,
    pub target_fs: u32,
    pub target_len: usize,
}

impl ResampleSpec {
    /// Standard 10-second window: `target_len = duration_s * target_fs`.
    pub fn standard(source_fs: u32, target_fs: u32) -> Self {
        ResampleSpec {
            source_fs,
            target_fs,
            target_len: (DEFAULT_DURATION_S * target_fs) as usize,
        }
    }

    /// Length-preserving conversion of an `n_samples`-long record: the
    /// output covers the same time span, rounded to the nearest sample.
    pub fn for_length(source_fs: u32, target_fs: u32, n_samples: usize) -> Self {
        let num = n_samples as u64 * target_fs as u64;
        let den = source_fs as u64;
        ResampleSpec {
            source_fs,
            target_fs,
            target_len: ((num + den / 2) / den) as usize,
        }
    }
}

pub fn clean_nonfinite(record: &EcgRecord) -> EcgRecord {
    let leads = record.leads.mapv(|v| if v.is_finite() { v } else { 0.0 });
    record.with_signal(record.fs_hz, leads)
}

pub fn clip_amplitude(record: &EcgRecord, limit_mv: f64) -> Result<EcgRecord, PreprocessError> {
    // Also rejects NaN limits.
    if !(limit_mv > 0.0) {
        return Err(PreprocessError::NonPositiveLimit(limit_mv));
    }
    let limit = limit_mv as f32;
    let leads = record.leads.mapv(|v| v.clamp(-limit, limit));
    Ok(record.with_signal(record.fs_hz, leads))
}

/// Resamples every lead independently to `spec.target_len`.
pub fn resample_record(
    resampler: &mut Resampler,
    record: &EcgRecord,
    spec: &ResampleSpec,
) -> Result<EcgRecord, PreprocessError> {
    if record.fs_hz != spec.source_fs {
        return Err(PreprocessError::FsMismatch {
            expected: spec.source_fs,
            actual: record.fs_hz,
        });
    }
    let mut out = Array2::<f32>::zeros((record.n_leads(), spec.target_len));
    for (lead, mut dst) in record.leads.rows().into_iter().zip(out.rows_mut()) {
        let x: Vec<f64> = lead.iter().map(|&v| v as f64).collect();
        let y = resampler.resample(&x, spec.target_len)?;
        for (d, v) in dst.iter_mut().zip(y) {
            *d = v as f32;
        }
    }
    Ok(record.with_signal(spec.target_fs, out))
}

/// Per-lead `(x - mean) / std` with population std; near-constant leads
/// become all zeros.
pub fn zscore_normalize(record: &EcgRecord) -> EcgRecord {
    let mut leads = record.leads.clone();
    for mut lead in leads.axis_iter_mut(Axis(0)) {
        let n = lead.len();
        if n == 0 {
            continue;
        }
        let mean = lead.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = lead
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt();
        if std < ZSCORE_MIN_STD {
            lead.fill(0.0);
        } else {
            lead.mapv_inplace(|v| ((v as f64 - mean) / std) as f32);
        }
    }
    record.with_signal(record.fs_hz, leads)
}

/// Keeps the leading `duration_s * fs_hz` samples of every lead.
pub fn segment(record: &EcgRecord, duration_s: u32) -> Result<EcgRecord, PreprocessError> {
    let needed = duration_s as usize * record.fs_hz as usize;
    if record.n_samples() < needed {
        return Err(PreprocessError::TooShort {
            needed,
            actual: record.n_samples(),
        });
    }
    if record.n_samples() == needed {
        return Ok(record.clone());
    }
    let leads = record.leads.slice(ndarray::s![.., ..needed]).to_owned();
    Ok(record.with_signal(record.fs_hz, leads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub clip_mv: f64,
    pub duration_s: u32,
    pub qc: QcThresholds,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            clip_mv: DEFAULT_CLIP_MV,
            duration_s: DEFAULT_DURATION_S,
            qc: QcThresholds::default(),
        }
    }
}

/// Clean and clip a raw record, returning it with its quality report.
pub fn prepare_native(
    resampler: &mut Resampler,
    record: &EcgRecord,
    config: &PreprocessConfig,
) -> Result<(EcgRecord, QcReport), PreprocessError> {
    let cleaned = clip_amplitude(&clean_nonfinite(record), config.clip_mv)?;
    let report = quality_check(resampler, &cleaned, &config.qc);
    Ok((cleaned, report))
}

/// Resample → z-score → segment one cleaned record to `target_fs`.
pub fn to_target_rate(
    resampler: &mut Resampler,
    cleaned: &EcgRecord,
    target_fs: u32,
    duration_s: u32,
) -> Result<EcgRecord, PreprocessError> {
    let spec = ResampleSpec::for_length(cleaned.fs_hz, target_fs, cleaned.n_samples());
    let resampled = resample_record(resampler, cleaned, &spec)?;
    segment(&zscore_normalize(&resampled), duration_s)
}
