use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use super::{domain, DspError};

/// Conversion from g to mm/s².
pub const MM_PER_G: f64 = crate::simkit::GRAVITY * 1e3;

/// Tapered fraction applied by [`accel_to_disp`].
pub const INTEGRATION_TAPER: f64 = 0.1;

/// Tukey (tapered cosine) window; `alpha` is the tapered fraction.
pub fn tukey(n: usize, alpha: f64) -> Vec<f64> {
    if n < 2 || alpha <= 0.0 {
        return vec![1.0; n];
    }
    let alpha = alpha.min(1.0);
    let edge = alpha * (n - 1) as f64 / 2.0;
    (0..n)
        .map(|i| {
            let x = i as f64;
            let from_end = (n - 1) as f64 - x;
            let d = x.min(from_end);
            if d < edge {
                0.5 * (1.0 - (PI * d / edge).cos())
            } else {
                1.0
            }
        })
        .collect()
}

/// Displacement (mm) from acceleration (g) by division with −(2πf)² in the
/// frequency domain. The record is made zero-mean and Tukey(0.1) tapered so
/// its periodic extension is continuous, bins below `hp_cutoff` are zeroed,
/// and the inverse transform is returned zero-mean.
pub fn accel_to_disp(accel_g: &[f64], fs: f64, hp_cutoff: f64) -> Result<Vec<f64>, DspError> {
    if !(hp_cutoff > 0.0 && hp_cutoff < fs / 2.0) {
        return domain(format!(
            "high-pass cutoff {hp_cutoff} Hz must lie in (0, {})",
            fs / 2.0
        ));
    }
    let n = accel_g.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mean = accel_g.iter().sum::<f64>() / n as f64;
    let taper = tukey(n, INTEGRATION_TAPER);
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex<f64>> = accel_g
        .iter()
        .zip(&taper)
        .map(|(a, w)| Complex::new((a - mean) * w * MM_PER_G, 0.0))
        .collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let df = fs / n as f64;
    for (k, c) in buf.iter_mut().enumerate() {
        // signed bin frequency
        let f = if k <= n / 2 {
            k as f64
        } else {
            k as f64 - n as f64
        } * df;
        if f.abs() < hp_cutoff {
            *c = Complex::new(0.0, 0.0);
        } else {
            let w = 2.0 * PI * f;
            *c /= -(w * w);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re / n as f64).collect();
    let mean = out.iter().sum::<f64>() / n as f64;
    out.iter_mut().for_each(|v| *v -= mean);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// a(t) = −A(2πf)² sin(2πft) is the exact second derivative of A sin(2πft).
    #[test]
    fn analytic_sine_pair() {
        let (amp, f, fs, n) = (1.5, 4.78, 100.0, 3000);
        let w = 2.0 * PI * f;
        let accel: Vec<f64> = (0..n)
            .map(|i| -amp * w * w * (w * i as f64 / fs).sin() / MM_PER_G)
            .collect();
        let u = accel_to_disp(&accel, fs, 1.0).unwrap();
        for (i, got) in u.iter().enumerate().take(n * 9 / 10).skip(n / 10) {
            let exact = amp * (w * i as f64 / fs).sin();
            assert!((got - exact).abs() <= 0.02 * amp, "i={i}: {got} vs {exact}");
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let u = accel_to_disp(&vec![0.0; 512], 100.0, 1.0).unwrap();
        assert!(u.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dc_offset_removed() {
        let base: Vec<f64> = (0..2000)
            .map(|i| 0.01 * (2.0 * PI * 5.0 * i as f64 / 100.0).sin())
            .collect();
        let shifted: Vec<f64> = base.iter().map(|v| v + 0.3).collect();
        let a = accel_to_disp(&base, 100.0, 1.0).unwrap();
        let b = accel_to_disp(&shifted, 100.0, 1.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn cutoff_must_be_below_nyquist() {
        assert!(accel_to_disp(&[0.0; 10], 100.0, 50.0).is_err());
        assert!(accel_to_disp(&[0.0; 10], 100.0, 0.0).is_err());
    }

    #[test]
    fn tukey_shape() {
        let w = tukey(101, 0.1);
        assert_eq!(w[0], 0.0);
        assert_eq!(w[50], 1.0);
        assert!((w[100]).abs() < 1e-15);
        assert!(w.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
