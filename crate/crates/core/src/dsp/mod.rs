//! Signal-processing kernels shared by the node and the analysis server.

mod fir;
mod integrate;
mod welch;
pub mod window;

use thiserror::Error;

pub use fir::{
    decimate, filter_apply, fir_lowpass_design, frequency_response, FirSpec, DEFAULT_CUTOFF_HZ,
    DEFAULT_ORDER,
};
pub use integrate::{accel_to_disp, tukey, INTEGRATION_TAPER, MM_PER_G};
pub use welch::{peak_frequency, welch_psd, Psd, WelchConfig};
pub use window::{windows, Window};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Registry(#[from] crate::RegistryError),
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T, DspError> {
    Err(DspError::Domain(msg.into()))
}

/// Subtracts the arithmetic mean.
pub fn detrend_mean(series: &[f64]) -> Vec<f64> {
    if series.is_empty() {
        return Vec::new();
    }
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    series.iter().map(|v| v - mean).collect()
}
