//! Spectral windows, registered by name.

use std::f64::consts::PI;
use std::sync::LazyLock;

use crate::registry::{Named, Registry};

pub trait Window: Named + Send + Sync {
    /// `periodic` windows suit spectral averaging (DFT-even); symmetric ones
    /// are used for linear-phase filter design.
    fn coefficients(&self, n: usize, periodic: bool) -> Vec<f64>;
}

fn cosine_sum(n: usize, periodic: bool, a: &[f64]) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let denom = if periodic { n } else { n - 1 } as f64;
    (0..n)
        .map(|i| {
            let x = 2.0 * PI * i as f64 / denom;
            a.iter()
                .enumerate()
                .map(|(k, c)| {
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    sign * c * (k as f64 * x).cos()
                })
                .sum()
        })
        .collect()
}

struct Hann;
struct Hamming;
struct Blackman;
struct Rectangular;

impl Named for Hann {
    fn name(&self) -> &'static str {
        "hann"
    }
    fn describe(&self) -> &'static str {
        "raised cosine, default for Welch averaging"
    }
}
impl Window for Hann {
    fn coefficients(&self, n: usize, periodic: bool) -> Vec<f64> {
        cosine_sum(n, periodic, &[0.5, 0.5])
    }
}

impl Named for Hamming {
    fn name(&self) -> &'static str {
        "hamming"
    }
    fn describe(&self) -> &'static str {
        "0.54/0.46 raised cosine, used for FIR design"
    }
}
impl Window for Hamming {
    fn coefficients(&self, n: usize, periodic: bool) -> Vec<f64> {
        cosine_sum(n, periodic, &[0.54, 0.46])
    }
}

impl Named for Blackman {
    fn name(&self) -> &'static str {
        "blackman"
    }
    fn describe(&self) -> &'static str {
        "three-term Blackman, low sidelobes"
    }
}
impl Window for Blackman {
    fn coefficients(&self, n: usize, periodic: bool) -> Vec<f64> {
        cosine_sum(n, periodic, &[0.42, 0.5, 0.08])
    }
}

impl Named for Rectangular {
    fn name(&self) -> &'static str {
        "rectangular"
    }
    fn describe(&self) -> &'static str {
        "no taper"
    }
}
impl Window for Rectangular {
    fn coefficients(&self, n: usize, _periodic: bool) -> Vec<f64> {
        vec![1.0; n]
    }
}

static WINDOWS: LazyLock<Registry<dyn Window>> = LazyLock::new(|| {
    Registry::<dyn Window>::new("window")
        .with(Box::new(Hann))
        .with(Box::new(Hamming))
        .with(Box::new(Blackman))
        .with(Box::new(Rectangular))
});

/// Built-in window table.
pub fn windows() -> &'static Registry<dyn Window> {
    &WINDOWS
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        let h = windows().resolve("hann").unwrap().coefficients(4, true);
        let expect = [0.0, 0.5, 1.0, 0.5];
        for (a, b) in h.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let m = windows().resolve("hamming").unwrap().coefficients(5, false);
        assert!((m[0] - 0.08).abs() < 1e-15);
        assert!((m[2] - 1.0).abs() < 1e-15);
        assert!((m[1] - m[3]).abs() < 1e-15);
        let b = windows()
            .resolve("blackman")
            .unwrap()
            .coefficients(3, false);
        assert!(b[0].abs() < 1e-15 && (b[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn registry_lists_all() {
        let names: Vec<_> = windows().names().collect();
        assert_eq!(names, ["hann", "hamming", "blackman", "rectangular"]);
    }
}
