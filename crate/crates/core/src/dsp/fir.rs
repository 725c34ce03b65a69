use std::f64::consts::PI;

use super::{domain, window::windows, DspError};

/// Default anti-alias filter order used before the ×10 decimation.
pub const DEFAULT_ORDER: usize = 300;
/// Default anti-alias cutoff, Hz (below the 50 Hz post-decimation Nyquist).
pub const DEFAULT_CUTOFF_HZ: f64 = 40.0;

/// Linear-phase FIR filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FirSpec {
    pub taps: Vec<f64>,
    /// Delay in samples, `(taps.len() - 1) / 2`.
    pub group_delay: usize,
}

impl FirSpec {
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// |H(f)| evaluated directly from the taps.
    pub fn magnitude_at(&self, freq: f64, fs: f64) -> f64 {
        frequency_response(&self.taps, freq, fs)
    }
}

/// Hamming-windowed sinc lowpass with `order + 1` taps, normalised to unit DC
/// gain. `cutoff` is the half-amplitude (−6 dB) point.
pub fn fir_lowpass_design(fs: f64, cutoff: f64, order: usize) -> Result<FirSpec, DspError> {
    if !(fs > 0.0) {
        return domain("sample rate must be positive");
    }
    if !(cutoff > 0.0 && cutoff < fs / 2.0) {
        return domain(format!("cutoff {cutoff} Hz must lie in (0, {})", fs / 2.0));
    }
    if order == 0 || !order.is_multiple_of(2) {
        return domain("filter order must be even and positive");
    }
    let n = order + 1;
    let mid = order as f64 / 2.0;
    let fc = cutoff / fs;
    let win = windows()
        .resolve("hamming")
        .expect("built-in window")
        .coefficients(n, false);
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let x = i as f64 - mid;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            };
            sinc * win[i]
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    // enforce exact symmetry after normalisation
    for i in 0..n / 2 {
        let avg = 0.5 * (taps[i] + taps[n - 1 - i]);
        taps[i] = avg;
        taps[n - 1 - i] = avg;
    }
    Ok(FirSpec {
        taps,
        group_delay: order / 2,
    })
}

/// Magnitude of the DTFT of `taps` at `freq`.
pub fn frequency_response(taps: &[f64], freq: f64, fs: f64) -> f64 {
    let w = 2.0 * PI * freq / fs;
    let (re, im) = taps
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(re, im), (k, h)| {
            let ph = w * k as f64;
            (re + h * ph.cos(), im - h * ph.sin())
        });
    re.hypot(im)
}

/// Zero-phase application: the output is aligned with the input (group delay
/// removed) and both edges are padded by mirror reflection. Output length
/// equals input length.
pub fn filter_apply(spec: &FirSpec, series: &[f64]) -> Result<Vec<f64>, DspError> {
    let n = series.len();
    if n <= spec.taps.len() {
        return domain(format!(
            "series of {n} samples is too short for a {}-tap filter",
            spec.taps.len()
        ));
    }
    let d = spec.group_delay;
    let mut padded = Vec::with_capacity(n + 2 * d);
    padded.extend((1..=d).rev().map(|i| series[i]));
    padded.extend_from_slice(series);
    padded.extend((1..=d).map(|i| series[n - 1 - i]));
    Ok((0..n)
        .map(|i| {
            spec.taps
                .iter()
                .zip(&padded[i..i + spec.taps.len()])
                .map(|(h, x)| h * x)
                .sum()
        })
        .collect())
}

/// Keeps every `factor`-th sample starting at index 0.
pub fn decimate(series: &[f64], factor: usize) -> Result<Vec<f64>, DspError> {
    if factor < 1 {
        return domain("decimation factor must be at least 1");
    }
    Ok(series.iter().step_by(factor).copied().collect())
}
