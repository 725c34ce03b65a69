use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{domain, window::windows, DspError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WelchConfig {
    pub segment_len: usize,
    /// Fraction of a segment shared with the next one, in [0, 1).
    pub overlap: f64,
    /// Registered window name, see [`super::windows`].
    pub window: String,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self {
            segment_len: 1024,
            overlap: 0.5,
            window: "hann".to_string(),
        }
    }
}

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psd {
    pub freqs: Vec<f64>,
    /// Units of the input squared per Hz.
    pub power: Vec<f64>,
    pub df: f64,
    pub window: String,
    pub segment_len: usize,
    pub overlap: f64,
    pub segments: usize,
}

impl Psd {
    /// Power at an arbitrary frequency from the parabola through the three
    /// bins nearest to it.
    pub fn value_at(&self, freq: f64) -> f64 {
        let last = self.power.len() - 1;
        let k = ((freq / self.df).round() as usize).clamp(1, last.saturating_sub(1).max(1));
        if self.power.len() < 3 {
            return self.power[k.min(last)];
        }
        let (a, b, c) = (self.power[k - 1], self.power[k], self.power[k + 1]);
        let x = freq / self.df - k as f64;
        // Lagrange form through (-1, a), (0, b), (1, c)
        let v = b + 0.5 * x * (c - a) + 0.5 * x * x * (a - 2.0 * b + c);
        v.max(0.0)
    }

    /// Index range of bins whose frequency lies in `[lo, hi]`.
    pub fn band(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let start = self.freqs.partition_point(|f| *f < lo);
        let end = self.freqs.partition_point(|f| *f <= hi);
        start..end.max(start)
    }

    pub fn nyquist(&self) -> f64 {
        *self.freqs.last().unwrap_or(&0.0)
    }
}

/// Welch averaged periodogram with per-segment mean removal.
pub fn welch_psd(series: &[f64], fs: f64, cfg: &WelchConfig) -> Result<Psd, DspError> {
    let nseg = cfg.segment_len;
    if nseg < 2 {
        return domain("segment length must be at least 2");
    }
    if nseg > series.len() {
        return domain(format!(
            "segment of {nseg} samples is longer than the series ({})",
            series.len()
        ));
    }
    if !(0.0..1.0).contains(&cfg.overlap) {
        return domain("overlap must lie in [0, 1)");
    }
    if !(fs > 0.0) {
        return domain("sample rate must be positive");
    }
    let window = windows().resolve(&cfg.window)?.coefficients(nseg, true);
    let wss: f64 = window.iter().map(|w| w * w).sum();
    let step = (nseg - (cfg.overlap * nseg as f64).round() as usize).max(1);

    let fft = FftPlanner::new().plan_fft_forward(nseg);
    let nbins = nseg / 2 + 1;
    let mut acc = vec![0.0; nbins];
    let mut buf = vec![Complex::new(0.0, 0.0); nseg];
    let mut segments = 0;
    let mut start = 0;
    while start + nseg <= series.len() {
        let seg = &series[start..start + nseg];
        let mean = seg.iter().sum::<f64>() / nseg as f64;
        for (b, (x, w)) in buf.iter_mut().zip(seg.iter().zip(&window)) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
        segments += 1;
        start += step;
    }
    let scale = 1.0 / (fs * wss * segments as f64);
    let power: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let one_sided = if k == 0 || (nseg.is_multiple_of(2) && k == nseg / 2) {
                1.0
            } else {
                2.0
            };
            p * scale * one_sided
        })
        .collect();
    let df = fs / nseg as f64;
    Ok(Psd {
        freqs: (0..nbins).map(|k| k as f64 * df).collect(),
        power,
        df,
        window: cfg.window.clone(),
        segment_len: nseg,
        overlap: cfg.overlap,
        segments,
    })
}

/// Frequency of the largest PSD bin in `[lo, hi]`, refined by a 3-point
/// parabolic fit through that bin and its neighbours.
pub fn peak_frequency(psd: &Psd, lo: f64, hi: f64) -> Result<f64, DspError> {
    if !(lo >= 0.0 && hi <= psd.nyquist() + 1e-12 && lo < hi) {
        return domain(format!(
            "band [{lo}, {hi}] Hz is not inside [0, {}]",
            psd.nyquist()
        ));
    }
    let band = psd.band(lo, hi);
    if band.is_empty() {
        return domain(format!("band [{lo}, {hi}] Hz contains no PSD bins"));
    }
    let k = band
        .clone()
        .max_by(|&a, &b| psd.power[a].total_cmp(&psd.power[b]))
        .expect("non-empty band");
    if k == 0 || k + 1 >= psd.power.len() {
        return Ok(psd.freqs[k]);
    }
    let (a, b, c) = (psd.power[k - 1], psd.power[k], psd.power[k + 1]);
    let denom = a - 2.0 * b + c;
    let offset = if denom < 0.0 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Ok((k as f64 + offset) * psd.df)
}
