//! Analytical simply supported girder used as ground truth.
//!
//! Responses are computed by modal superposition of sinusoidal mode shapes,
//! each modal coordinate integrated with the constant-average-acceleration
//! Newmark scheme. Units are chosen so the strain/displacement relation has no
//! stray powers of ten: positions in m, displacement in mm, neutral-axis depth
//! in mm, strain in microstrain. With curvature shapes `(kπ/L)²·sin(kπx/L)` in
//! 1/m², `strain_ue = depth_mm · Σ q_k_mm · ψ_k(x)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GRAVITY: f64 = 9.80665;

/// Accelerometer noise floor, g RMS.
pub const ACCEL_NOISE_G: f64 = 0.45e-3;
/// Strain noise floor, microstrain RMS.
pub const STRAIN_NOISE_UE: f64 = 1.52;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("position {position} m lies outside the beam (0, {length})")]
    Domain { position: f64, length: f64 },
    #[error("invalid beam model: {0}")]
    InvalidBeam(String),
    #[error("invalid load: {0}")]
    InvalidLoad(String),
    #[error("sample rate {fs} Hz is below 20x the highest mode ({max_freq} Hz)")]
    SampleRateTooLow { fs: f64, max_freq: f64 },
    #[error("duration must be positive")]
    Duration,
    #[error("ambient force level {0} kN must be finite and non-negative")]
    Ambient(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamModel {
    pub length_m: f64,
    pub natural_freqs_hz: Vec<f64>,
    pub damping_ratios: Vec<f64>,
    pub neutral_axis_mm: f64,
    /// Mass per unit length, kg/m. Only sets response amplitude.
    pub mass_per_length_kg_m: f64,
    pub gauge_positions_m: Vec<f64>,
    pub accel_positions_m: Vec<f64>,
    pub output_positions_m: Vec<f64>,
}

impl Default for BeamModel {
    /// 30 m span tuned to a 4.78 Hz fundamental, 2 % damping, 1700 mm
    /// neutral-axis depth; gauges at the quarter points, accelerometer and
    /// displacement output at midspan.
    fn default() -> Self {
        let f1 = 4.78;
        Self {
            length_m: 30.0,
            natural_freqs_hz: vec![f1, 4.0 * f1, 9.0 * f1],
            damping_ratios: vec![0.02; 3],
            neutral_axis_mm: 1700.0,
            mass_per_length_kg_m: 10_000.0,
            gauge_positions_m: vec![7.5, 15.0, 22.5],
            accel_positions_m: vec![15.0],
            output_positions_m: vec![15.0],
        }
    }
}

impl BeamModel {
    pub fn mode_count(&self) -> usize {
        self.natural_freqs_hz.len()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidBeam(m.to_string()));
        if !(self.length_m > 0.0) {
            return bad("length must be positive");
        }
        if self.natural_freqs_hz.is_empty() {
            return bad("at least one mode is required");
        }
        if self.damping_ratios.len() != self.natural_freqs_hz.len() {
            return bad("one damping ratio per mode is required");
        }
        if !(self.natural_freqs_hz[0] > 0.0)
            || self.natural_freqs_hz.windows(2).any(|w| !(w[1] > w[0]))
        {
            return bad("natural frequencies must be positive and strictly increasing");
        }
        if self.damping_ratios.iter().any(|z| !(0.0..1.0).contains(z)) {
            return bad("damping ratios must lie in [0, 1)");
        }
        if !(self.neutral_axis_mm > 0.0) {
            return bad("neutral-axis depth must be positive");
        }
        if !(self.mass_per_length_kg_m > 0.0) {
            return bad("mass per length must be positive");
        }
        for &x in self
            .gauge_positions_m
            .iter()
            .chain(&self.accel_positions_m)
            .chain(&self.output_positions_m)
        {
            check_position(self.length_m, x)?;
        }
        Ok(())
    }

    /// Displacement mode shapes at `positions` (rows) for every mode (columns).
    pub fn mode_shapes(&self, positions: &[f64]) -> Result<DMatrix<f64>, SimError> {
        displacement_modes(self.length_m, self.mode_count(), positions)
    }

    /// Strain mode shapes: neutral-axis depth times curvature shape.
    pub fn strain_mode_shapes(&self, positions: &[f64]) -> Result<DMatrix<f64>, SimError> {
        Ok(curvature_modes(self.length_m, self.mode_count(), positions)? * self.neutral_axis_mm)
    }
}

fn check_position(length: f64, x: f64) -> Result<(), SimError> {
    if x > 0.0 && x < length {
        Ok(())
    } else {
        Err(SimError::Domain {
            position: x,
            length,
        })
    }
}

/// `sin(kπx/L)` for k = 1..=modes.
pub fn displacement_modes(
    length: f64,
    modes: usize,
    positions: &[f64],
) -> Result<DMatrix<f64>, SimError> {
    let mut m = DMatrix::zeros(positions.len(), modes);
    for (i, &x) in positions.iter().enumerate() {
        check_position(length, x)?;
        for k in 0..modes {
            m[(i, k)] = ((k + 1) as f64 * PI * x / length).sin();
        }
    }
    Ok(m)
}

/// `(kπ/L)²·sin(kπx/L)`: curvature per unit modal displacement (1/m²),
/// i.e. strain shapes for unit neutral-axis depth.
pub fn curvature_modes(
    length: f64,
    modes: usize,
    positions: &[f64],
) -> Result<DMatrix<f64>, SimError> {
    let mut m = displacement_modes(length, modes, positions)?;
    for k in 0..modes {
        let wn = (k + 1) as f64 * PI / length;
        m.column_mut(k).scale_mut(wn * wn);
    }
    Ok(m)
}

/// A vehicle crossing the span from x = 0 towards x = L.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossingLoad {
    pub arrival_time_s: f64,
    pub speed_m_s: f64,
    pub axle_weights_kn: Vec<f64>,
    /// Distance from each axle to the next; `axle_weights.len() - 1` entries.
    #[serde(default)]
    pub axle_spacings_m: Vec<f64>,
    /// Road-roughness and suspension forces riding on the static weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic: Option<DynamicLoad>,
}

/// Axle force `W·(1 + c·η(t))`, where `η` is a zero-mean, unit-variance
/// random-phase multisine with flat spectrum over `band_hz`, independent
/// per axle and deterministic in `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicLoad {
    pub coefficient: f64,
    #[serde(default = "default_dynamic_band")]
    pub band_hz: [f64; 2],
    pub seed: u64,
}

fn default_dynamic_band() -> [f64; 2] {
    [1.5, 20.0]
}

const MULTISINE_TONES: usize = 128;

impl DynamicLoad {
    fn validate(&self) -> Result<(), SimError> {
        let [lo, hi] = self.band_hz;
        if !(self.coefficient >= 0.0 && self.coefficient < 1.0) {
            return Err(SimError::InvalidLoad(
                "dynamic coefficient must lie in [0, 1)".into(),
            ));
        }
        if !(lo > 0.0 && hi > lo) {
            return Err(SimError::InvalidLoad(
                "dynamic band must satisfy 0 < lo < hi".into(),
            ));
        }
        Ok(())
    }

    /// Tone frequencies (Hz) and phases for axle `axle`.
    fn tones(&self, axle: usize) -> Vec<(f64, f64)> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(axle as u64 * 7919));
        let [lo, hi] = self.band_hz;
        let step = (hi - lo) / MULTISINE_TONES as f64;
        (0..MULTISINE_TONES)
            .map(|j| {
                let f = lo + (j as f64 + rng.random::<f64>()) * step;
                (f, rng.random::<f64>() * 2.0 * PI)
            })
            .collect()
    }
}

impl CrossingLoad {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.speed_m_s > 0.0) {
            return Err(SimError::InvalidLoad("speed must be positive".into()));
        }
        if self.axle_weights_kn.iter().any(|w| *w < 0.0) {
            return Err(SimError::InvalidLoad(
                "axle weights must be non-negative".into(),
            ));
        }
        if self.axle_spacings_m.len() + 1 != self.axle_weights_kn.len()
            && !self.axle_weights_kn.is_empty()
        {
            return Err(SimError::InvalidLoad(
                "need exactly one spacing between consecutive axles".into(),
            ));
        }
        if self.axle_spacings_m.iter().any(|s| *s < 0.0) {
            return Err(SimError::InvalidLoad(
                "axle spacings must be non-negative".into(),
            ));
        }
        if let Some(d) = &self.dynamic {
            d.validate()?;
        }
        Ok(())
    }

    /// Same vehicle with every axle weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.axle_weights_kn.iter_mut().for_each(|w| *w *= factor);
        out
    }

    fn axle_offsets(&self) -> Vec<f64> {
        let mut offsets = Vec::with_capacity(self.axle_weights_kn.len());
        let mut acc = 0.0;
        offsets.push(0.0);
        for s in &self.axle_spacings_m {
            acc += s;
            offsets.push(acc);
        }
        offsets.truncate(self.axle_weights_kn.len());
        offsets
    }
}

/// Oracle responses sampled at `fs_hz`, starting at t = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub fs_hz: f64,
    /// Displacement, mm, one series per `output_positions_m` entry.
    pub displacement_mm: Vec<Vec<f64>>,
    /// Strain, microstrain, one series per gauge.
    pub strain_ue: Vec<Vec<f64>>,
    /// Vertical acceleration, g, one series per accelerometer position.
    pub accel_g: Vec<Vec<f64>>,
    /// Modal displacements, mm, one series per mode.
    pub modal_mm: Vec<Vec<f64>>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.modal_mm.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.fs_hz
    }

    pub fn time_s(&self) -> Vec<f64> {
        (0..self.len()).map(|i| i as f64 / self.fs_hz).collect()
    }
}

/// Response of one damped single-degree-of-freedom oscillator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalResponse {
    pub displacement: Vec<f64>,
    pub velocity: Vec<f64>,
    pub acceleration: Vec<f64>,
}

/// Newmark-β (γ = 1/2, β = 1/4) integration of
/// `q'' + 2ζω q' + ω² q = p(t)` on a uniform grid of step `dt`.
/// `force[i]` is the modal force per unit modal mass at step `i`.
pub fn newmark_sdof(
    omega: f64,
    zeta: f64,
    dt: f64,
    q0: f64,
    v0: f64,
    force: &[f64],
) -> ModalResponse {
    let n = force.len();
    let mut q = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    if n == 0 {
        return ModalResponse {
            displacement: q,
            velocity: v,
            acceleration: a,
        };
    }
    let c = 2.0 * zeta * omega;
    let k = omega * omega;
    let denom = 1.0 + c * dt / 2.0 + k * dt * dt / 4.0;
    let (mut qn, mut vn) = (q0, v0);
    let mut an = force[0] - c * vn - k * qn;
    q.push(qn);
    v.push(vn);
    a.push(an);
    for &p in &force[1..] {
        let q_pred = qn + dt * vn + dt * dt / 4.0 * an;
        let v_pred = vn + dt / 2.0 * an;
        let a1 = (p - c * v_pred - k * q_pred) / denom;
        vn = v_pred + dt / 2.0 * a1;
        qn = q_pred + dt * dt / 4.0 * a1;
        an = a1;
        q.push(qn);
        v.push(vn);
        a.push(an);
    }
    ModalResponse {
        displacement: q,
        velocity: v,
        acceleration: a,
    }
}

/// Broadband ambient excitation (wind, micro-tremor, distant traffic):
/// independent white generalised forces on every mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbientExcitation {
    /// RMS generalised force per mode, kN.
    pub modal_force_rms_kn: f64,
    pub seed: u64,
}

/// Superposes the modal responses to every crossing in `loads`.
pub fn simulate_crossing(
    beam: &BeamModel,
    loads: &[CrossingLoad],
    duration_s: f64,
    fs_hz: f64,
) -> Result<GroundTruth, SimError> {
    simulate_response(beam, loads, None, duration_s, fs_hz)
}

/// [`simulate_crossing`] plus optional ambient forcing.
pub fn simulate_response(
    beam: &BeamModel,
    loads: &[CrossingLoad],
    ambient: Option<&AmbientExcitation>,
    duration_s: f64,
    fs_hz: f64,
) -> Result<GroundTruth, SimError> {
    beam.validate()?;
    if let Some(a) = ambient {
        if !(a.modal_force_rms_kn >= 0.0 && a.modal_force_rms_kn.is_finite()) {
            return Err(SimError::Ambient(a.modal_force_rms_kn));
        }
    }
    for l in loads {
        l.validate()?;
    }
    if !(duration_s > 0.0) {
        return Err(SimError::Duration);
    }
    let max_freq = *beam.natural_freqs_hz.last().expect("validated non-empty");
    if fs_hz < 20.0 * max_freq {
        return Err(SimError::SampleRateTooLow {
            fs: fs_hz,
            max_freq,
        });
    }

    let n = (duration_s * fs_hz).round() as usize;
    let dt = 1.0 / fs_hz;
    let length = beam.length_m;
    // Generalised mass of a sinusoidal mode: m̄·L/2.
    let modal_mass = beam.mass_per_length_kg_m * length / 2.0;

    // (sample, position, force N) for every axle on the span
    let mut axle_hits: Vec<(usize, f64, f64)> = Vec::new();
    for load in loads {
        let offsets = load.axle_offsets();
        let first = (load.arrival_time_s * fs_hz).ceil().max(0.0) as usize;
        for (a, (&w, &off)) in load.axle_weights_kn.iter().zip(&offsets).enumerate() {
            let tones = load.dynamic.as_ref().map(|d| (d.coefficient, d.tones(a)));
            let amp = (2.0 / MULTISINE_TONES as f64).sqrt();
            for i in first..n {
                let t = i as f64 * dt - load.arrival_time_s;
                let x = load.speed_m_s * t - off;
                if x >= length {
                    break;
                }
                if x <= 0.0 {
                    continue;
                }
                let factor = match &tones {
                    Some((c, tones)) => {
                        let eta: f64 = tones
                            .iter()
                            .map(|(f, ph)| (2.0 * PI * f * t + ph).cos())
                            .sum();
                        1.0 + c * amp * eta
                    }
                    None => 1.0,
                };
                axle_hits.push((i, x, w * 1e3 * factor));
            }
        }
    }

    let mut modal_mm = Vec::with_capacity(beam.mode_count());
    let mut modal_acc = Vec::with_capacity(beam.mode_count());
    for (k, (&f, &zeta)) in beam
        .natural_freqs_hz
        .iter()
        .zip(&beam.damping_ratios)
        .enumerate()
    {
        let wave = (k + 1) as f64 * PI / length;
        let mut force = vec![0.0; n];
        for &(i, x, p) in &axle_hits {
            force[i] += p * (wave * x).sin();
        }
        if let Some(a) = ambient.filter(|a| a.modal_force_rms_kn > 0.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(k as u64));
            let normal = Normal::new(0.0, a.modal_force_rms_kn * 1e3).expect("finite level");
            force.iter_mut().for_each(|p| *p += normal.sample(&mut rng));
        }
        force.iter_mut().for_each(|p| *p /= modal_mass);
        let omega = 2.0 * PI * f;
        let r = newmark_sdof(omega, zeta, dt, 0.0, 0.0, &force);
        modal_mm.push(r.displacement.iter().map(|q| q * 1e3).collect::<Vec<_>>());
        modal_acc.push(r.acceleration);
    }

    let phi_out = beam.mode_shapes(&beam.output_positions_m)?;
    let psi = beam.strain_mode_shapes(&beam.gauge_positions_m)?;
    let phi_acc = beam.mode_shapes(&beam.accel_positions_m)?;

    let combine = |shapes: &DMatrix<f64>, coords: &[Vec<f64>], scale: f64| -> Vec<Vec<f64>> {
        (0..shapes.nrows())
            .map(|r| {
                (0..n)
                    .map(|i| {
                        (0..shapes.ncols())
                            .map(|k| shapes[(r, k)] * coords[k][i])
                            .sum::<f64>()
                            * scale
                    })
                    .collect()
            })
            .collect()
    };

    Ok(GroundTruth {
        fs_hz,
        displacement_mm: combine(&phi_out, &modal_mm, 1.0),
        strain_ue: combine(&psi, &modal_mm, 1.0),
        accel_g: combine(&phi_acc, &modal_acc, 1.0 / GRAVITY),
        modal_mm,
    })
}

/// Sensor noise floor selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    /// RMS level in g.
    Accel(f64),
    /// RMS level in microstrain.
    Strain(f64),
}

impl NoiseKind {
    pub fn accel() -> Self {
        NoiseKind::Accel(ACCEL_NOISE_G)
    }

    pub fn strain() -> Self {
        NoiseKind::Strain(STRAIN_NOISE_UE)
    }

    pub fn rms(self) -> f64 {
        match self {
            NoiseKind::Accel(r) | NoiseKind::Strain(r) => r,
        }
    }
}

/// Adds zero-mean Gaussian noise of the selected RMS. Deterministic in `seed`.
pub fn add_noise(series: &[f64], kind: NoiseKind, seed: u64) -> Vec<f64> {
    let rms = kind.rms();
    if rms == 0.0 {
        return series.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, rms).expect("finite noise level");
    series.iter().map(|x| x + normal.sample(&mut rng)).collect()
}

/// Impulse seen by the low-power watchdog accelerometer, e.g. an expansion
/// joint hit as a vehicle enters the span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatchdogSpike {
    pub t_s: f64,
    pub mg: f64,
}

/// Node housekeeping values reported with each session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeState {
    pub temperature_c: f64,
    pub battery_v: f64,
    pub solar_ma: f64,
}

impl Default for NodeState {
    fn default() -> Self {
        Self {
            temperature_c: 25.0,
            battery_v: 3.9,
            solar_ma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub accel_g: f64,
    pub strain_ue: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            accel_g: ACCEL_NOISE_G,
            strain_ue: STRAIN_NOISE_UE,
        }
    }
}

/// Scenario file: a beam, the vehicles crossing it and the surrounding
/// context needed to drive a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub beam: BeamModel,
    #[serde(default)]
    pub loads: Vec<CrossingLoad>,
    pub duration_s: f64,
    #[serde(default = "default_fs")]
    pub fs_hz: f64,
    /// Wall-clock time of t = 0, ms since the Unix epoch.
    #[serde(default)]
    pub epoch_ms: i64,
    #[serde(default)]
    pub watchdog_spikes: Vec<WatchdogSpike>,
    #[serde(default)]
    pub node_state: NodeState,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambient: Option<AmbientExcitation>,
}

fn default_fs() -> f64 {
    1000.0
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario field `{path}` (line {line}, column {column}): {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("reading scenario file")]
    Io(#[from] std::io::Error),
}

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            ScenarioError::Parse {
                path,
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            }
        })?;
        scenario.beam.validate()?;
        for l in &scenario.loads {
            l.validate()?;
        }
        Ok(scenario)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, ScenarioError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn simulate(&self) -> Result<GroundTruth, SimError> {
        simulate_response(
            &self.beam,
            &self.loads,
            self.ambient.as_ref(),
            self.duration_s,
            self.fs_hz,
        )
    }
}
