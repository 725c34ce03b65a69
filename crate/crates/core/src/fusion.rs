//! Reference-free displacement from strain and acceleration.
//!
//! Strain gauges give the displacement *shape* through the modal basis,
//! including the quasi-static part an accelerometer cannot see, but only up
//! to the unknown neutral-axis depth. Double-integrated acceleration gives
//! the correct amplitude near the dominant mode. A single factor `α` that
//! equalises the two displacement PSDs at that mode calibrates the shape.
//!
//! Units: strain in µε, displacement in mm, curvature shapes in 1/m². With
//! these, `ε = y_na · Σ ψ_k q_k` for unit-depth curvature shapes `ψ_k`, so
//! the strain-shape displacement equals `y_na` times the true one.

use std::sync::LazyLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{self, DspError, Psd, WelchConfig};
use crate::simkit::{self, BeamModel, SimError};
use crate::{Named, Registry, RegistryError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("mode basis: {0}")]
    Basis(String),
    #[error("input: {0}")]
    Input(String),
    #[error("degenerate scaling: strain-shape PSD at {f_n:.3} Hz is zero")]
    Degenerate { f_n: f64 },
    #[error(
        "no dominant peak: peak {peak:.3e} is below {threshold}x the band median {median:.3e}"
    )]
    NoPeak {
        peak: f64,
        median: f64,
        threshold: f64,
    },
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

/// Where the gauges and outputs sit on a simply supported span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisGeometry {
    pub length_m: f64,
    pub modes: usize,
    pub gauge_positions_m: Vec<f64>,
    pub output_positions_m: Vec<f64>,
}

impl Default for BasisGeometry {
    fn default() -> Self {
        Self::from_beam(&BeamModel::default())
    }
}

impl BasisGeometry {
    pub fn from_beam(beam: &BeamModel) -> Self {
        Self {
            length_m: beam.length_m,
            modes: beam.mode_count().min(beam.gauge_positions_m.len()),
            gauge_positions_m: beam.gauge_positions_m.clone(),
            output_positions_m: beam.output_positions_m.clone(),
        }
    }
}

/// Displacement shapes `Φ` (outputs × m) and strain shapes `Ψ_s`
/// (gauges × m) with the pseudo-inverse mapping strain to modal coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeBasis {
    pub disp_modes: DMatrix<f64>,
    pub strain_modes: DMatrix<f64>,
    strain_pinv: DMatrix<f64>,
}

impl ModeBasis {
    /// `disp_modes` columns are taken as given; shapes normalised to unit
    /// max-abs over the span keep the modal coordinates in mm.
    pub fn new(disp_modes: DMatrix<f64>, strain_modes: DMatrix<f64>) -> Result<Self, FusionError> {
        let m = strain_modes.ncols();
        if disp_modes.ncols() != m || m == 0 {
            return Err(FusionError::Basis(format!(
                "Φ has {} modes and Ψ_s has {m}",
                disp_modes.ncols()
            )));
        }
        if strain_modes.nrows() < m {
            return Err(FusionError::Basis(format!(
                "{} gauges cannot resolve {m} modes",
                strain_modes.nrows()
            )));
        }
        let svd = strain_modes.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smax > 0.0) || smin <= 1e-10 * smax {
            return Err(FusionError::Basis(format!(
                "strain mode matrix is rank deficient (singular values {smin:.3e} .. {smax:.3e})"
            )));
        }
        let strain_pinv = svd
            .pseudo_inverse(1e-10 * smax)
            .map_err(|e| FusionError::Basis(e.to_string()))?;
        Ok(Self {
            disp_modes,
            strain_modes,
            strain_pinv,
        })
    }

    /// Sine displacement shapes and unit-depth curvature shapes.
    pub fn from_geometry(g: &BasisGeometry) -> Result<Self, FusionError> {
        Self::new(
            simkit::displacement_modes(g.length_m, g.modes, &g.output_positions_m)?,
            simkit::curvature_modes(g.length_m, g.modes, &g.gauge_positions_m)?,
        )
    }

    pub fn modes(&self) -> usize {
        self.strain_modes.ncols()
    }

    pub fn gauges(&self) -> usize {
        self.strain_modes.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.disp_modes.nrows()
    }
}

/// Reference level subtracted from each gauge before projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Median of the record: the unloaded level as long as vehicles occupy
    /// less than half of it.
    #[default]
    Median,
    Mean,
}

impl Baseline {
    pub fn level(self, series: &[f64]) -> f64 {
        match self {
            Baseline::Median => median(series),
            Baseline::Mean if series.is_empty() => 0.0,
            Baseline::Mean => series.iter().sum::<f64>() / series.len() as f64,
        }
    }
}

/// Unscaled displacement at output `target`: `Φ[target] · pinv(Ψ_s) · ε(t)`
/// after removing each gauge's `baseline`.
pub fn strain_to_shape<S: AsRef<[f64]>>(
    strain: &[S],
    basis: &ModeBasis,
    target: usize,
    baseline: Baseline,
) -> Result<Vec<f64>, FusionError> {
    if strain.len() != basis.gauges() {
        return Err(FusionError::Input(format!(
            "{} strain series for a {}-gauge basis",
            strain.len(),
            basis.gauges()
        )));
    }
    if target >= basis.outputs() {
        return Err(FusionError::Input(format!(
            "output {target} out of range ({} outputs)",
            basis.outputs()
        )));
    }
    let len = strain[0].as_ref().len();
    if strain.iter().any(|s| s.as_ref().len() != len) {
        return Err(FusionError::Input("strain series differ in length".into()));
    }
    // row weights w = Φ[target] · pinv(Ψ_s), one per gauge
    let w = basis.disp_modes.row(target) * &basis.strain_pinv;
    let centred: Vec<Vec<f64>> = strain
        .iter()
        .map(|s| {
            let s = s.as_ref();
            let b = baseline.level(s);
            s.iter().map(|v| v - b).collect()
        })
        .collect();
    Ok((0..len)
        .map(|i| centred.iter().zip(w.iter()).map(|(s, wg)| s[i] * wg).sum())
        .collect())
}

/// How `α` is formed from the two PSD values at `f_n`.
pub trait ScalingRule: Named + Send + Sync {
    fn alpha(&self, psd_acc: f64, psd_shape: f64) -> f64;
    /// Neutral-axis depth (mm) implied by `alpha` for a unit-depth basis.
    fn ena(&self, alpha: f64) -> f64;
}

/// `α = sqrt(S_acc / S_shape)`: multiplying the shape by `α` matches the
/// acceleration-based PSD at `f_n`.
pub struct PsdMatch;

impl Named for PsdMatch {
    fn name(&self) -> &'static str {
        "psd-match"
    }
    fn describe(&self) -> &'static str {
        "sqrt(S_acc/S_strain); fused PSD equals accel PSD at f_n"
    }
}

impl ScalingRule for PsdMatch {
    fn alpha(&self, psd_acc: f64, psd_shape: f64) -> f64 {
        (psd_acc / psd_shape).sqrt()
    }
    fn ena(&self, alpha: f64) -> f64 {
        1.0 / alpha
    }
}

/// `α = sqrt(S_shape / S_acc)`, the reciprocal ratio. Kept for comparison;
/// the fused amplitude it produces does not match the acceleration.
pub struct ReciprocalRatio;

impl Named for ReciprocalRatio {
    fn name(&self) -> &'static str {
        "reciprocal"
    }
    fn describe(&self) -> &'static str {
        "sqrt(S_strain/S_acc); reciprocal ratio, for comparison only"
    }
}

impl ScalingRule for ReciprocalRatio {
    fn alpha(&self, psd_acc: f64, psd_shape: f64) -> f64 {
        (psd_shape / psd_acc).sqrt()
    }
    fn ena(&self, alpha: f64) -> f64 {
        alpha
    }
}

static RULES: LazyLock<Registry<dyn ScalingRule>> = LazyLock::new(|| {
    Registry::<dyn ScalingRule>::new("scaling rule")
        .with(Box::new(PsdMatch))
        .with(Box::new(ReciprocalRatio))
});

pub fn scaling_rules() -> &'static Registry<dyn ScalingRule> {
    &RULES
}

pub const DEFAULT_RULE: &str = "psd-match";

/// `α` from the Welch PSDs of both displacement estimates at `f_n`.
pub fn scaling_factor(
    u_shape: &[f64],
    u_acc: &[f64],
    fs: f64,
    f_n: f64,
    welch: &WelchConfig,
    rule: &dyn ScalingRule,
) -> Result<f64, FusionError> {
    if u_shape.len() != u_acc.len() {
        return Err(FusionError::Input(format!(
            "series lengths differ: {} vs {}",
            u_shape.len(),
            u_acc.len()
        )));
    }
    let s_shape = dsp::welch_psd(u_shape, fs, welch)?;
    let s_acc = dsp::welch_psd(u_acc, fs, welch)?;
    alpha_from_psds(&s_shape, &s_acc, f_n, rule)
}

fn alpha_from_psds(
    s_shape: &Psd,
    s_acc: &Psd,
    f_n: f64,
    rule: &dyn ScalingRule,
) -> Result<f64, FusionError> {
    if !(f_n > 0.0 && f_n < s_shape.nyquist()) {
        return Err(FusionError::Input(format!(
            "f_n {f_n} Hz outside the PSD band"
        )));
    }
    let (ps, pa) = (s_shape.value_at(f_n), s_acc.value_at(f_n));
    if !(ps > 0.0) || !(pa > 0.0) {
        return Err(FusionError::Degenerate { f_n });
    }
    Ok(rule.alpha(pa, ps))
}

/// Depth of the equivalent neutral axis (mm) for `alpha` under `rule`.
pub fn equivalent_neutral_axis(alpha: f64, rule: &dyn ScalingRule) -> f64 {
    rule.ena(alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub hp_cutoff_hz: f64,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    /// Minimum ratio of the band's peak to its median accel PSD.
    pub min_prominence: f64,
    pub welch: WelchConfig,
    pub scaling_rule: String,
    pub accel_channel: String,
    pub target_output: usize,
    pub baseline: Baseline,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            hp_cutoff_hz: 1.0,
            band_lo_hz: 1.0,
            band_hi_hz: 20.0,
            min_prominence: 10.0,
            welch: WelchConfig::default(),
            scaling_rule: DEFAULT_RULE.into(),
            accel_channel: "az".into(),
            target_output: 0,
            baseline: Baseline::Median,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionQuality {
    pub accel_peak_psd: f64,
    pub accel_median_psd: f64,
    pub prominence: f64,
    pub psd_u_acc_at_fn: f64,
    pub psd_u_shape_at_fn: f64,
    pub psd_u_fused_at_fn: f64,
    /// `|S_fused − S_acc| / S_acc` at `f_n`.
    pub psd_mismatch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionResult {
    pub fs_hz: f64,
    pub f_n_hz: f64,
    pub alpha: f64,
    pub scaling_rule: String,
    pub ena_mm: f64,
    pub u_fused: Vec<f64>,
    pub u_acc: Vec<f64>,
    pub u_strain_shape: Vec<f64>,
    pub quality: FusionQuality,
}

impl FusionResult {
    pub fn peak_mm(&self) -> f64 {
        self.u_fused.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Full fusion of one session's vertical acceleration (g) and gauge strains
/// (µε), both at `fs`.
pub fn fuse<S: AsRef<[f64]>>(
    accel_g: &[f64],
    strain: &[S],
    fs: f64,
    basis: &ModeBasis,
    cfg: &FusionConfig,
) -> Result<FusionResult, FusionError> {
    let rule = scaling_rules().resolve(&cfg.scaling_rule)?;
    if strain.iter().any(|s| s.as_ref().len() != accel_g.len()) {
        return Err(FusionError::Input(
            "strain and acceleration lengths differ".into(),
        ));
    }
    let accel = dsp::detrend_mean(accel_g);
    let s_accel = dsp::welch_psd(&accel, fs, &cfg.welch)?;
    let band = s_accel.band(cfg.band_lo_hz, cfg.band_hi_hz);
    let in_band = &s_accel.power[band];
    let peak = in_band.iter().copied().fold(0.0, f64::max);
    let med = median(in_band);
    if !(peak > 0.0) || peak < cfg.min_prominence * med {
        return Err(FusionError::NoPeak {
            peak,
            median: med,
            threshold: cfg.min_prominence,
        });
    }
    let f_n = dsp::peak_frequency(&s_accel, cfg.band_lo_hz, cfg.band_hi_hz)?;

    let u_acc = dsp::accel_to_disp(&accel, fs, cfg.hp_cutoff_hz)?;
    let u_shape = strain_to_shape(strain, basis, cfg.target_output, cfg.baseline)?;
    let s_uacc = dsp::welch_psd(&u_acc, fs, &cfg.welch)?;
    let s_shape = dsp::welch_psd(&u_shape, fs, &cfg.welch)?;
    let alpha = alpha_from_psds(&s_shape, &s_uacc, f_n, rule)?;
    let u_fused: Vec<f64> = u_shape.iter().map(|v| alpha * v).collect();

    let psd_acc = s_uacc.value_at(f_n);
    let psd_shape = s_shape.value_at(f_n);
    let psd_fused = alpha * alpha * psd_shape;
    Ok(FusionResult {
        fs_hz: fs,
        f_n_hz: f_n,
        alpha,
        scaling_rule: rule.name().to_string(),
        ena_mm: equivalent_neutral_axis(alpha, rule),
        u_fused,
        u_acc,
        u_strain_shape: u_shape,
        quality: FusionQuality {
            accel_peak_psd: peak,
            accel_median_psd: med,
            prominence: if med > 0.0 { peak / med } else { f64::INFINITY },
            psd_u_acc_at_fn: psd_acc,
            psd_u_shape_at_fn: psd_shape,
            psd_u_fused_at_fn: psd_fused,
            psd_mismatch: (psd_fused - psd_acc).abs() / psd_acc,
        },
    })
}

/// Runs [`fuse`] on a conditioned session.
pub fn fuse_session(
    session: &crate::nodesim::Session,
    basis: &ModeBasis,
    cfg: &FusionConfig,
) -> Result<FusionResult, FusionError> {
    let accel = session.channel(&cfg.accel_channel).ok_or_else(|| {
        FusionError::Input(format!("session has no channel {:?}", cfg.accel_channel))
    })?;
    let strain = session.strain_channels();
    if strain.len() < basis.gauges() {
        return Err(FusionError::Input(format!(
            "session has {} gauges, basis needs {}",
            strain.len(),
            basis.gauges()
        )));
    }
    fuse(accel, &strain[..basis.gauges()], session.fs_hz, basis, cfg)
}
