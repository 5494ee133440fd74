//! Frequency-domain rate conversion.
//!
//! The input spectrum is truncated or zero-padded symmetrically around DC
//! and inverse-transformed, matching `scipy.signal.resample` on real input.
//! A shared Nyquist bin is merged (downsampling to even length) or split in
//! half (upsampling from even length) so the output stays real.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::PreprocessError;

/// FFT resampler with a cached plan set. Reuse one instance across many
/// leads; plans are keyed by length inside the planner.
pub struct Resampler {
    planner: FftPlanner<f64>,
}

impl Default for Resampler {
    fn default() -> Self {
        Resampler::new()
    }
}

impl Resampler {
    pub fn new() -> Self {
        Resampler {
            planner: FftPlanner::new(),
        }
    }

    fn forward(&mut self, n: usize) -> Arc<dyn Fft<f64>> {
        self.planner.plan_fft_forward(n)
    }

    fn inverse(&mut self, n: usize) -> Arc<dyn Fft<f64>> {
        self.planner.plan_fft_inverse(n)
    }

    /// Unnormalized forward DFT of a real signal.
    pub fn spectrum(&mut self, signal: &[f64]) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
        if !buf.is_empty() {
            self.forward(buf.len()).process(&mut buf);
        }
        buf
    }

    pub fn resample(&mut self, signal: &[f64], target_len: usize) -> Result<Vec<f64>, PreprocessError> {
        let n = signal.len();
        if n < 2 {
            return Err(PreprocessError::TooShort {
                needed: 2,
                actual: n,
            });
        }
        if target_len == 0 {
            return Err(PreprocessError::NonPositiveTarget);
        }
        let m = target_len;
        if m == n {
            return Ok(signal.to_vec());
        }

        let x = self.spectrum(signal);
        let mut y = map_spectrum(&x, m);
        self.inverse(m).process(&mut y);

        // Inverse FFT is unnormalized (factor m); overall scale m/n gives 1/n.
        let scale = 1.0 / n as f64;
        Ok(y.iter().map(|c| c.re * scale).collect())
    }
}

/// Moves bins of an `n`-point spectrum into an `m`-point one.
pub(crate) fn map_spectrum(x: &[Complex<f64>], m: usize) -> Vec<Complex<f64>> {
    let n = x.len();
    let shared = n.min(m);
    let mut y = vec![Complex::new(0.0, 0.0); m];

    // Non-negative frequencies up to and including a shared Nyquist bin.
    for k in 0..=shared / 2 {
        y[k] = x[k];
    }
    // Negative frequencies, excluding any Nyquist bin.
    for j in 1..=(shared - 1) / 2 {
        y[m - j] = x[n - j];
    }

    if shared % 2 == 0 {
        let half = shared / 2;
        if m < n {
            y[half] += x[n - half];
        } else if n < m {
            let split = x[half] * 0.5;
            y[half] = split;
            y[m - half] = split;
        }
    }
    y
}

/// One-shot convenience wrapper around [`Resampler::resample`].
pub fn fft_resample(signal: &[f64], target_len: usize) -> Result<Vec<f64>, PreprocessError> {
    Resampler::new().resample(signal, target_len)
}

/// Fraction of non-DC spectral power in bins whose frequency exceeds
/// `cutoff_frac` of the Nyquist frequency. Returns 0 for signals with no
/// non-DC power.
pub fn high_frequency_power_ratio(resampler: &mut Resampler, signal: &[f64], cutoff_frac: f64) -> f64 {
    let n = signal.len();
    if n < 2 {
        return 0.0;
    }
    let x = resampler.spectrum(signal);
    // Bin k sits at k/n of the sampling rate; Nyquist is 1/2.
    let cutoff = cutoff_frac * 0.5;
    let mut total = 0.0;
    let mut high = 0.0;
    for (k, c) in x.iter().enumerate().skip(1) {
        let p = c.norm_sqr();
        total += p;
        let folded = k.min(n - k) as f64 / n as f64;
        if folded > cutoff {
            high += p;
        }
    }
    // A constant signal leaves only roundoff outside DC.
    let dc = x[0].norm_sqr();
    if total <= 1e-12 * (total + dc) {
        return 0.0;
    }
    high / total
}
